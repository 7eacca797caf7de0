//! Annotation API, versioned under `/v1`. The endpoint catalog lives in
//! `docs/api.md`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use camsel::dataset::{CameraId, SurgerySequence};
use camsel::labels::{format_labels, AuditEntry, LabelBook, LabelRecord, ResolvePolicy};
use camsel::model::load_checkpoint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::GlobalArgs;
use crate::commands::{experiment_config, load_sequences, sequence_predictions, CliError, CliResult};

pub const API_VERSION: &str = "v1";

struct Book {
    labels: LabelBook,
    log: Option<PathBuf>,
}

struct Entry {
    sequence: SurgerySequence,
    book: Mutex<Book>,
    predictions: Option<BTreeMap<u64, CameraId>>,
}

pub struct AppState {
    entries: BTreeMap<String, Entry>,
    seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Seeds the display permutations.
    pub seed: u64,
    /// Where `<sequence>.audit.jsonl` logs live; in-memory only when absent.
    pub log_dir: Option<PathBuf>,
    /// Model forecasts per sequence, `(timestamp, camera)`.
    pub predictions: BTreeMap<String, Vec<(u64, CameraId)>>,
}

fn replay(book: &mut LabelBook, path: &Path) -> camsel::Result<()> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(camsel::Error::io(format!("opening {}", path.display()), e)),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| camsel::Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| camsel::Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let entry: AuditEntry = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match entry.action.as_str() {
            "submit" => book.submit(&entry.annotator, entry.timestamp, CameraId(entry.camera), entry.permutation),
            "resolve" => {
                book.resolve(
                    entry.timestamp,
                    &ResolvePolicy::Manual {
                        camera: Some(entry.camera),
                        reviewer: entry.annotator,
                    },
                )?;
            }
            other => return Err(parse_err(format!("unknown action `{other}`"))),
        }
    }
    Ok(())
}

/// Builds the service state. Existing audit logs under `log_dir` are
/// replayed on top of each sequence's labels file.
pub fn build_state(sequences: Vec<SurgerySequence>, options: ServeOptions) -> camsel::Result<Arc<AppState>> {
    if let Some(dir) = &options.log_dir {
        fs::create_dir_all(dir).map_err(|e| camsel::Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut entries = BTreeMap::new();
    for sequence in sequences {
        if sequence.is_empty() {
            return Err(camsel::Error::Integrity(format!("sequence {} has no frames", sequence.id)));
        }
        let mut labels = LabelBook::from_records(&sequence.labels)?;
        let log = options.log_dir.as_ref().map(|d| d.join(format!("{}.audit.jsonl", sequence.id)));
        if let Some(p) = &log {
            replay(&mut labels, p)?;
        }
        let predictions = options
            .predictions
            .get(&sequence.id)
            .map(|p| p.iter().copied().collect());
        let id = sequence.id.clone();
        let entry = Entry {
            sequence,
            book: Mutex::new(Book { labels, log }),
            predictions,
        };
        if entries.insert(id.clone(), entry).is_some() {
            return Err(camsel::Error::Integrity(format!("duplicate sequence id {id}")));
        }
    }
    Ok(Arc::new(AppState {
        entries,
        seed: options.seed,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sequences", get(list_sequences))
        .route("/v1/sequences/{id}", get(sequence_detail))
        .route("/v1/sequences/{id}/frames/{timestamp}", get(frame))
        .route("/v1/sequences/{id}/frames/{timestamp}/tiles/{slot}", get(tile))
        .route("/v1/sequences/{id}/frames/{timestamp}/images/{camera}", get(camera_image))
        .route("/v1/sequences/{id}/labels", get(labels).post(submit))
        .route("/v1/sequences/{id}/conflicts", get(conflicts))
        .route("/v1/sequences/{id}/conflicts/{timestamp}/resolve", post(resolve))
        .route("/v1/sequences/{id}/export", get(export))
        .route("/v1/sequences/{id}/audit", get(audit))
        .route("/v1/sequences/{id}/predictions", get(predictions))
        .route("/v1/sequences/{id}/session", get(session))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

/// `camsel serve`: loads the manifest and blocks until ctrl-c.
pub fn run_server(g: &GlobalArgs, manifest: &Option<PathBuf>, addr: SocketAddr, checkpoint: Option<&Path>) -> CliResult<String> {
    let cfg = experiment_config(g)?;
    let manifest = manifest
        .clone()
        .or(cfg.manifest.clone())
        .ok_or(CliError::MissingManifest)?;
    let sequences = load_sequences(&manifest)?;
    let mut predictions = BTreeMap::new();
    if let Some(p) = checkpoint {
        let ckpt = load_checkpoint(p)?;
        for s in &sequences {
            predictions.insert(s.id.clone(), sequence_predictions(&ckpt, s)?);
        }
    }
    let options = ServeOptions {
        seed: g.seed.unwrap_or(0),
        log_dir: Some(g.out.clone().unwrap_or_else(|| PathBuf::from("out")).join("annotations")),
        predictions,
    };
    let state = build_state(sequences, options)?;
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        context: "starting runtime".into(),
        source,
    })?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| CliError::Io {
            context: format!("binding {addr}"),
            source,
        })?;
        eprintln!("serving /{API_VERSION} on http://{}", listener.local_addr().map_err(|source| CliError::Io {
            context: "local address".into(),
            source,
        })?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|source| CliError::Io {
                context: "serving".into(),
                source,
            })
    })?;
    Ok("server stopped\n".into())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": { "code": code, "message": message.into() } }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body["error"][key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<camsel::Error> for ApiError {
    fn from(e: camsel::Error) -> Self {
        let status = match &e {
            camsel::Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn entry<'a>(state: &'a AppState, id: &str) -> ApiResult<&'a Entry> {
    state
        .entries
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "sequence_not_found", format!("no sequence `{id}`")).with("sequence", json!(id)))
}

fn frame_index(e: &Entry, timestamp: u64) -> ApiResult<usize> {
    let frames = &e.sequence.frame_sets;
    frames.binary_search_by_key(&timestamp, |f| f.timestamp).map_err(|_| {
        let range = [frames[0].timestamp, frames[frames.len() - 1].timestamp];
        ApiError::new(
            StatusCode::NOT_FOUND,
            "timestamp_not_found",
            format!("no frame at t={timestamp} in {}; valid range {}..={}", e.sequence.id, range[0], range[1]),
        )
        .with("valid_range", json!(range))
    })
}

fn lock(e: &Entry) -> std::sync::MutexGuard<'_, Book> {
    // a panic mid-write never commits its clone, so the book is still consistent
    e.book.lock().unwrap_or_else(|p| p.into_inner())
}

/// Applies `f` to a copy of the book, appends the new audit entries to the
/// log and only then swaps the copy in. Holding the lock serializes writers.
fn write_book<T>(e: &Entry, f: impl FnOnce(&mut LabelBook) -> ApiResult<T>) -> ApiResult<T> {
    let mut book = lock(e);
    let mut next = book.labels.clone();
    let before = next.audit().len();
    let out = f(&mut next)?;
    if let Some(path) = &book.log {
        let mut lines = String::new();
        for entry in &next.audit()[before..] {
            lines.push_str(&serde_json::to_string(entry).expect("audit entry serializes"));
            lines.push('\n');
        }
        if !lines.is_empty() {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut file| file.write_all(lines.as_bytes()))
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", format!("appending to audit log: {e}")))?;
        }
    }
    book.labels = next;
    Ok(out)
}

/// Display order for one (annotator, frame): `permutation[slot]` is the
/// camera shown in that slot.
pub fn display_permutation(seed: u64, sequence: &str, timestamp: u64, annotator: &str, cameras: usize) -> Vec<usize> {
    let digest = Sha256::digest(format!("{seed}/{sequence}/{timestamp}/{annotator}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut perm: Vec<usize> = (0..cameras).collect();
    perm.shuffle(&mut ChaCha8Rng::from_seed(key));
    perm
}

pub fn permutation_token(perm: &[usize]) -> String {
    perm.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

pub fn parse_token(token: &str, cameras: usize) -> Option<Vec<usize>> {
    let perm: Vec<usize> = token.split('-').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    let mut seen = vec![false; cameras];
    for &c in &perm {
        if c >= cameras || std::mem::replace(&mut seen[c], true) {
            return None;
        }
    }
    (perm.len() == cameras).then_some(perm)
}

fn record_json(r: &LabelRecord) -> Value {
    json!({ "timestamp": r.timestamp, "camera": r.camera.0, "annotator": r.annotator, "resolved": r.resolved })
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": API_VERSION }))
}

fn summary(id: &str, e: &Entry) -> Value {
    let book = lock(e);
    let frames = &e.sequence.frame_sets;
    json!({
        "id": id,
        "cameras": e.sequence.cameras,
        "frames": frames.len(),
        "first_timestamp": frames[0].timestamp,
        "last_timestamp": frames[frames.len() - 1].timestamp,
        "resolved": book.labels.resolved_records().len(),
        "conflicts": book.labels.conflicts().len(),
        "has_predictions": e.predictions.is_some(),
    })
}

async fn list_sequences(State(s): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = s.entries.iter().map(|(id, e)| summary(id, e)).collect();
    Json(json!({ "sequences": list }))
}

async fn sequence_detail(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let mut v = summary(&id, e);
    v["timestamps"] = json!(e.sequence.frame_sets.iter().map(|f| f.timestamp).collect::<Vec<_>>());
    Ok(Json(v))
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

fn annotator_from(headers: &HeaderMap, explicit: Option<String>) -> ApiResult<String> {
    let name = explicit.or_else(|| {
        headers
            .get("x-annotator")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    });
    match name.map(|n| n.trim().to_string()) {
        Some(n) if !n.is_empty() && !n.contains([',', '\n', '\r']) => Ok(n),
        Some(_) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotator", "annotator ids must be non-empty without commas or newlines")),
        None => Err(ApiError::new(StatusCode::BAD_REQUEST, "missing_annotator", "pass `annotator` or an X-Annotator header")),
    }
}

async fn frame(
    State(s): State<Arc<AppState>>,
    UrlPath((id, timestamp)): UrlPath<(String, u64)>,
    Query(q): Query<AnnotatorQuery>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let i = frame_index(e, timestamp)?;
    let annotator = annotator_from(&headers, q.annotator)?;
    let perm = display_permutation(s.seed, &id, timestamp, &annotator, e.sequence.cameras);
    let token = permutation_token(&perm);
    let tiles: Vec<Value> = (0..perm.len())
        .map(|slot| json!({ "slot": slot, "url": format!("/v1/sequences/{id}/frames/{timestamp}/tiles/{slot}?token={token}") }))
        .collect();
    let book = lock(e);
    let own = book
        .labels
        .votes_at(timestamp)
        .into_iter()
        .find(|r| r.annotator == annotator)
        .map(|r| r.camera.0);
    let frames = &e.sequence.frame_sets;
    Ok(Json(json!({
        "sequence": id,
        "timestamp": timestamp,
        "index": i,
        "cameras": e.sequence.cameras,
        "permutation": perm,
        "token": token,
        "tiles": tiles,
        "selection": own,
        "selection_slot": own.and_then(|c| perm.iter().position(|&p| p == c)),
        "label": book.labels.resolved_at(timestamp).map(|r| record_json(&r)),
        "prev": i.checked_sub(1).map(|j| frames[j].timestamp),
        "next": frames.get(i + 1).map(|f| f.timestamp),
    })))
}

fn image_response(e: &Entry, i: usize, camera: usize) -> ApiResult<Response> {
    let Some(img) = e.sequence.frame_sets[i].images.get(camera) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "camera_not_found", format!("camera {camera} out of range")).with("cameras", json!(e.sequence.cameras)));
    };
    if img.is_synthetic() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "image_unavailable", format!("`{img}` has no pixels")));
    }
    let path = img.resolve(&e.sequence.base_dir);
    let bytes = fs::read(&path).map_err(|err| ApiError::new(StatusCode::NOT_FOUND, "image_unavailable", format!("{}: {err}", path.display())))?;
    let mime = match path.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: String,
}

fn bad_token(token: &str) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_token", format!("`{token}` is not a camera permutation"))
}

async fn tile(
    State(s): State<Arc<AppState>>,
    UrlPath((id, timestamp, slot)): UrlPath<(String, u64, usize)>,
    Query(q): Query<TokenQuery>,
) -> ApiResult<Response> {
    let e = entry(&s, &id)?;
    let i = frame_index(e, timestamp)?;
    let perm = parse_token(&q.token, e.sequence.cameras).ok_or_else(|| bad_token(&q.token))?;
    let camera = *perm
        .get(slot)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "slot_not_found", format!("slot {slot} out of range")))?;
    image_response(e, i, camera)
}

async fn camera_image(State(s): State<Arc<AppState>>, UrlPath((id, timestamp, camera)): UrlPath<(String, u64, usize)>) -> ApiResult<Response> {
    let e = entry(&s, &id)?;
    let i = frame_index(e, timestamp)?;
    image_response(e, i, camera)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    annotator: Option<String>,
    timestamp: u64,
    camera: Option<usize>,
    slot: Option<usize>,
    token: Option<String>,
}

async fn submit(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(body) = body?;
    let e = entry(&s, &id)?;
    frame_index(e, body.timestamp)?;
    let annotator = annotator_from(&headers, body.annotator)?;
    let cameras = e.sequence.cameras;
    let (camera, permutation) = match (body.camera, body.slot, body.token) {
        (Some(c), None, token) => {
            let perm = token.map(|t| parse_token(&t, cameras).ok_or_else(|| bad_token(&t))).transpose()?;
            (c, perm)
        }
        (None, Some(slot), Some(t)) => {
            let perm = parse_token(&t, cameras).ok_or_else(|| bad_token(&t))?;
            let c = *perm
                .get(slot)
                .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "slot_not_found", format!("slot {slot} out of range")))?;
            (c, Some(perm))
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_selection",
                "give either `camera` or both `slot` and `token`",
            ))
        }
    };
    if camera >= cameras {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "camera_not_found", format!("camera {camera} out of range")).with("cameras", json!(cameras)));
    }
    let t = body.timestamp;
    let out = write_book(e, |book| {
        let replaced = book.has_vote(&annotator, t);
        book.submit(&annotator, t, CameraId(camera), permutation);
        let serial = book.audit().last().map(|a| a.serial).unwrap_or_default();
        Ok(json!({
            "record": record_json(&LabelRecord::new(t, camera, annotator.clone(), false)),
            "serial": serial,
            "replaced": replaced,
            "conflict": book.conflicts().iter().any(|(ct, _)| *ct == t),
            "resolved": book.resolved_at(t).map(|r| record_json(&r)),
        }))
    })?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn labels(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let records: Vec<Value> = lock(e).labels.records().iter().map(record_json).collect();
    Ok(Json(json!({ "sequence": id, "records": records })))
}

async fn conflicts(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let list: Vec<Value> = lock(e)
        .labels
        .conflicts()
        .iter()
        .map(|(t, votes)| json!({ "timestamp": t, "votes": votes.iter().map(record_json).collect::<Vec<_>>() }))
        .collect();
    Ok(Json(json!({ "sequence": id, "conflicts": list })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    reviewer: Option<String>,
    camera: Option<usize>,
    policy: Option<String>,
}

async fn resolve(
    State(s): State<Arc<AppState>>,
    UrlPath((id, timestamp)): UrlPath<(String, u64)>,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(body) = body?;
    let e = entry(&s, &id)?;
    frame_index(e, timestamp)?;
    let policy = match (body.policy.as_deref(), body.reviewer, body.camera) {
        (Some("majority"), None, None) => ResolvePolicy::Majority,
        (None | Some("manual"), Some(reviewer), Some(camera)) => {
            if camera >= e.sequence.cameras {
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "camera_not_found", format!("camera {camera} out of range")));
            }
            annotator_from(&HeaderMap::new(), Some(reviewer.clone()))?;
            ResolvePolicy::Manual {
                camera: Some(camera),
                reviewer,
            }
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_resolution",
                "give `reviewer` and `camera`, or `policy: \"majority\"`",
            ))
        }
    };
    let record = write_book(e, |book| {
        if !book.conflicts().iter().any(|(t, _)| *t == timestamp) {
            return Err(ApiError::new(StatusCode::CONFLICT, "not_in_conflict", format!("t={timestamp} has no pending conflict")));
        }
        let r = book.resolve(timestamp, &policy)?;
        if !r.resolved {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "majority_tie", format!("votes at t={timestamp} are tied; a reviewer must choose")));
        }
        Ok(r)
    })?;
    Ok(Json(json!({ "record": record_json(&record) })))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    resolved_only: bool,
}

async fn export(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let e = entry(&s, &id)?;
    let book = lock(e);
    let records = if q.resolved_only { book.labels.resolved_records() } else { book.labels.records() };
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], format_labels(&records)).into_response())
}

async fn audit(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let entries = lock(e).labels.audit().to_vec();
    Ok(Json(json!({ "sequence": id, "entries": entries })))
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    timestamp: u64,
    predicted: usize,
    label: Option<usize>,
}

async fn predictions(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let Some(preds) = &e.predictions else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no_predictions", "start the server with --checkpoint to enable predictions"));
    };
    let book = lock(e);
    let rows: Vec<PredictionRow> = preds
        .iter()
        .map(|(&t, c)| PredictionRow {
            timestamp: t,
            predicted: c.0,
            label: book.labels.resolved_at(t).map(|r| r.camera.0),
        })
        .collect();
    let compared: Vec<&PredictionRow> = rows.iter().filter(|r| r.label.is_some()).collect();
    let agree = compared.iter().filter(|r| r.label == Some(r.predicted)).count();
    let agreement = (!compared.is_empty()).then(|| agree as f64 / compared.len() as f64);
    Ok(Json(json!({ "sequence": id, "predictions": rows, "compared": compared.len(), "agreement": agreement })))
}

async fn session(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let e = entry(&s, &id)?;
    let annotator = annotator_from(&headers, q.annotator)?;
    let book = lock(e);
    let frames = &e.sequence.frame_sets;
    let pending = frames.iter().find(|f| !book.labels.has_vote(&annotator, f.timestamp));
    let cursor = pending.unwrap_or(&frames[frames.len() - 1]).timestamp;
    Ok(Json(json!({
        "sequence": id,
        "annotator": annotator,
        "cursor": cursor,
        "labeled": book.labels.labeled_by(&annotator),
        "total": frames.len(),
        "complete": pending.is_none(),
        "pending_conflicts": book.labels.conflicts().iter().map(|(t, _)| *t).collect::<Vec<_>>(),
    })))
}
