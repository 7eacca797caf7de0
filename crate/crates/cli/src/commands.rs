use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use camsel::dataset::{chance_rate, load_manifest, make_split, write_manifest, CameraId, SurgerySequence};
use camsel::features::synth::{synth_generate, write_synthetic_dataset, ScenarioConfig};
use camsel::features::{
    cache_features, extract_sequence, load_detections, load_features, DetectionMap, FeatureMode, MeanPixelExtractor, Normalizer,
    SemanticConfig,
};
use camsel::model::{load_checkpoint, save_checkpoint, Checkpoint};
use camsel::train::{
    apply_overrides, evaluate_pooled, fingerprint, parse_config, predict_sequence, run_experiment, train_pooled, ExperimentConfig, MetricsReport,
    PreparedData, ProtocolKind, SequenceData,
};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, GlobalArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing checkpoint: pass --checkpoint <path>")]
    MissingCheckpoint,
    #[error("missing manifest: pass --manifest <path> or set `manifest` in the config")]
    MissingManifest,
    #[error("missing output directory: pass --out <dir>")]
    MissingOut,
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] camsel::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingCheckpoint | CliError::MissingManifest | CliError::MissingOut | CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Writes through a sibling `.partial` file so a failed run never leaves a
/// truncated artifact under the final name.
pub fn write_artifact(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    fs::write(&partial, contents).map_err(io_err(format!("writing {}", partial.display())))?;
    fs::rename(&partial, path).map_err(io_err(format!("renaming {}", partial.display())))
}

fn config_text(global: &GlobalArgs) -> CliResult<String> {
    match &global.config {
        Some(p) => fs::read_to_string(p).map_err(io_err(format!("reading config {}", p.display()))),
        None => Ok(String::new()),
    }
}

/// Relative paths inside a config resolve against the config's directory.
fn config_relative(global: &GlobalArgs, p: &Path) -> PathBuf {
    match global.config.as_deref().and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn experiment_config(global: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = apply_overrides(&config_text(global)?, &global.overrides)?;
    if let Some(seed) = global.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn manifest_path(global: &GlobalArgs, flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.manifest.as_deref().map(|p| config_relative(global, p)))
        .ok_or(CliError::MissingManifest)
}

/// Loads a manifest with absolute paths so they survive being rewritten
/// into another directory.
pub fn load_sequences(path: &Path) -> CliResult<Vec<SurgerySequence>> {
    let abs = fs::canonicalize(path).map_err(io_err(format!("opening manifest {}", path.display())))?;
    Ok(load_manifest(&abs)?)
}

fn load_data(path: &Path) -> CliResult<Vec<SequenceData>> {
    load_sequences(path)?
        .into_iter()
        .map(|s| SequenceData::load(s).map_err(CliError::from))
        .collect()
}

fn require_out(global: &GlobalArgs) -> CliResult<&Path> {
    global.out.as_deref().ok_or(CliError::MissingOut)
}

/// Runs one verb and returns what it prints on success.
pub fn run(cli: Cli) -> CliResult<String> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { manifest } => ingest(g, manifest),
        Command::Synth => synth(g),
        Command::Extract { manifest, visual_dim } => extract(g, manifest, *visual_dim),
        Command::Train { manifest, mode } => train(g, manifest, mode.as_deref()),
        Command::Eval {
            manifest,
            checkpoint,
            protocols,
        } => eval(g, manifest, checkpoint.as_deref(), *protocols),
        Command::Predict {
            manifest,
            checkpoint,
            sequence,
        } => predict(g, manifest, checkpoint.as_deref(), sequence.as_deref()),
        Command::Report { metrics, jsonl } => report(g, metrics, *jsonl),
        Command::Serve {
            manifest,
            addr,
            checkpoint,
        } => crate::serve::run_server(g, manifest, *addr, checkpoint.as_deref()),
    }
}

#[derive(Debug, Serialize)]
struct SequenceSummary {
    id: String,
    frames: usize,
    cameras: usize,
    labeled: bool,
    chance_rate: Option<f64>,
    split: Option<[usize; 3]>,
}

fn ingest(g: &GlobalArgs, flag: &Option<PathBuf>) -> CliResult<String> {
    let cfg = experiment_config(g)?;
    let seqs = load_sequences(&manifest_path(g, flag, &cfg)?)?;
    let mut rows = Vec::new();
    for s in &seqs {
        let labeled = s.is_labeled();
        let (chance, split) = if labeled {
            (Some(chance_rate(&s.label_sequence()?)?), Some(make_split(s, &cfg.split)?.sizes()))
        } else {
            (None, None)
        };
        rows.push(SequenceSummary {
            id: s.id.clone(),
            frames: s.len(),
            cameras: s.cameras,
            labeled,
            chance_rate: chance,
            split,
        });
    }
    let mut text = format!("{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "sequence", "frames", "cameras", "train", "val", "test", "chance");
    for r in &rows {
        let [a, b, c] = r.split.map(|s| s.map(|v| v.to_string())).unwrap_or_else(|| ["-".into(), "-".into(), "-".into()]);
        let chance = r.chance_rate.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(text, "{:<16} {:>7} {:>7} {a:>7} {b:>7} {c:>7} {chance:>7}", r.id, r.frames, r.cameras);
    }
    if let Some(out) = &g.out {
        let json = serde_json::to_string_pretty(&rows).expect("summary serializes");
        write_artifact(&out.join("ingest.json"), &json)?;
    }
    Ok(text)
}

/// `synth` config: `sequences` copies of `scenario`, each with its own
/// id and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sequences: usize,
    pub prefix: String,
    pub scenario: ScenarioConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 5,
            prefix: "synth".into(),
            scenario: ScenarioConfig::default(),
        }
    }
}

fn synth(g: &GlobalArgs) -> CliResult<String> {
    let out = require_out(g)?;
    let mut cfg: SynthConfig = parse_config(&config_text(g)?, &g.overrides)?;
    if cfg.sequences == 0 {
        return Err(CliError::Usage("synth: `sequences` must be positive".into()));
    }
    if let Some(seed) = g.seed {
        cfg.scenario.seed = seed;
    }
    let mut outputs = (0..cfg.sequences)
        .map(|i| {
            synth_generate(&ScenarioConfig {
                id: format!("{}{}", cfg.prefix, i + 1),
                seed: cfg.scenario.seed.wrapping_add(i as u64),
                ..cfg.scenario.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = write_synthetic_dataset(out, &mut outputs)?;
    Ok(format!("wrote {} sequences; manifest {}\n", outputs.len(), manifest.display()))
}

fn extract(g: &GlobalArgs, flag: &Option<PathBuf>, visual_dim: usize) -> CliResult<String> {
    let out = require_out(g)?;
    if visual_dim == 0 {
        return Err(CliError::Usage("--visual-dim must be positive".into()));
    }
    let cfg = experiment_config(g)?;
    let mut seqs = load_sequences(&manifest_path(g, flag, &cfg)?)?;
    let extractor = MeanPixelExtractor { dim: visual_dim };
    for s in &mut seqs {
        let dets = match &s.detections_path {
            Some(p) => load_detections(p)?,
            None => DetectionMap::new(),
        };
        let store = extract_sequence(s, &extractor, &dets, &SemanticConfig::default())?;
        let path = out.join(&s.id).join("features.bin");
        fs::create_dir_all(out.join(&s.id)).map_err(io_err(format!("creating {}", out.display())))?;
        cache_features(&store, &path)?;
        s.features_path = Some(path);
    }
    let manifest = out.join("manifest.txt");
    write_manifest(&manifest, &seqs)?;
    Ok(format!("extracted {} sequences; manifest {}\n", seqs.len(), manifest.display()))
}

fn resolve_mode(flag: Option<&str>, cfg: &ExperimentConfig) -> CliResult<FeatureMode> {
    match flag {
        Some(m) => Ok(m.parse()?),
        None => Ok(cfg.ablations[0]),
    }
}

/// Next free `ckpt-NNNN.json` under `dir`.
fn next_checkpoint(dir: &Path) -> CliResult<PathBuf> {
    let mut n = 0u32;
    if dir.exists() {
        for entry in fs::read_dir(dir).map_err(io_err(format!("listing {}", dir.display())))? {
            let name = entry.map_err(io_err("listing checkpoints"))?.file_name();
            let name = name.to_string_lossy();
            if let Some(v) = name.strip_prefix("ckpt-").and_then(|r| r.strip_suffix(".json")).and_then(|v| v.parse::<u32>().ok()) {
                n = n.max(v);
            }
        }
    }
    Ok(dir.join(format!("ckpt-{:04}.json", n + 1)))
}

fn train(g: &GlobalArgs, flag: &Option<PathBuf>, mode: Option<&str>) -> CliResult<String> {
    let out = require_out(g)?;
    let cfg = experiment_config(g)?;
    let mode = resolve_mode(mode, &cfg)?;
    let seed = cfg.seeds[0];
    let data = load_data(&manifest_path(g, flag, &cfg)?)?;
    let trained = train_pooled(&data, &cfg, mode, seed)?;
    let fp = fingerprint(&cfg, ProtocolKind::Pooled, mode, seed);
    let metadata = BTreeMap::from([
        ("fingerprint".to_string(), fp.clone()),
        ("seed".to_string(), seed.to_string()),
        ("config".to_string(), serde_json::to_string(&cfg).expect("config serializes")),
    ]);
    let ckpt = Checkpoint {
        model: trained.outcome.model,
        step: trained.outcome.steps,
        rng: trained.outcome.rng,
        feature_mode: mode,
        feature_dims: Some(data[0].dims),
        normalizer: Some(trained.prepared.normalizer.clone()),
        metadata,
    };
    let dir = out.join("checkpoints");
    fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let path = next_checkpoint(&dir)?;
    save_checkpoint(&ckpt, &path)?;
    let history = serde_json::to_string_pretty(&trained.outcome.history).expect("history serializes");
    write_artifact(&path.with_extension("history.json"), &history)?;
    let h = &trained.outcome.history;
    let best = &h.epochs[h.best_epoch - 1];
    Ok(format!(
        "trained {} epochs (best {}: val loss {:.4}, val accuracy {:.3}); fingerprint {fp}\ncheckpoint {}\n",
        h.epochs.len(),
        h.best_epoch,
        best.val_loss,
        best.val_accuracy,
        path.display()
    ))
}

fn checkpoint_inputs(ckpt: &Checkpoint, width: usize) -> Normalizer {
    ckpt.normalizer.clone().unwrap_or_else(|| Normalizer::identity(width))
}

fn eval(g: &GlobalArgs, flag: &Option<PathBuf>, checkpoint: Option<&Path>, protocols: bool) -> CliResult<String> {
    let checkpoint = checkpoint.ok_or(CliError::MissingCheckpoint)?;
    let cfg = experiment_config(g)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let data = load_data(&manifest_path(g, flag, &cfg)?)?;
    if let Some(d) = ckpt.feature_dims {
        if d != data[0].dims {
            return Err(camsel::Error::Integrity(format!("checkpoint expects feature dims {d:?}, data has {:?}", data[0].dims)).into());
        }
    }
    let normalizer = checkpoint_inputs(&ckpt, ckpt.model.config.input_dim);
    let prepared = PreparedData::from_normalizer(&data, ckpt.feature_mode, normalizer)?;
    let mut report = MetricsReport {
        reports: vec![evaluate_pooled(&data, &cfg, &ckpt.model, &prepared, cfg.seeds[0])?],
    };
    if protocols {
        let cfg = ExperimentConfig {
            protocols: cfg.protocols.iter().copied().filter(|p| *p != ProtocolKind::Pooled).collect(),
            ..cfg.clone()
        };
        report.reports.extend(run_experiment(&data, &cfg)?.reports);
    }
    let text = report.render_text();
    if let Some(out) = &g.out {
        write_artifact(&out.join("report.json"), &report.to_json()?)?;
        write_artifact(&out.join("report.txt"), &text)?;
        write_artifact(&out.join("records.jsonl"), &report.json_lines())?;
    }
    Ok(text)
}

/// `(timestamp, camera)` for every frame the checkpoint can forecast.
pub fn sequence_predictions(ckpt: &Checkpoint, seq: &SurgerySequence) -> CliResult<Vec<(u64, CameraId)>> {
    let Some(path) = &seq.features_path else {
        return Err(camsel::Error::Config(format!("sequence {} has no feature store; run extract first", seq.id)).into());
    };
    let store = load_features(path, ckpt.feature_dims.as_ref())?;
    let normalizer = checkpoint_inputs(ckpt, ckpt.model.config.input_dim);
    let preds = predict_sequence(&ckpt.model, ckpt.feature_mode, &normalizer, seq, &store)?;
    Ok(seq
        .frame_sets
        .iter()
        .zip(preds)
        .filter_map(|(f, p)| p.map(|c| (f.timestamp, c)))
        .collect())
}

pub const PREDICTIONS_HEADER: &str = "# camsel-predictions 1: timestamp,camera";

fn predict(g: &GlobalArgs, flag: &Option<PathBuf>, checkpoint: Option<&Path>, only: Option<&str>) -> CliResult<String> {
    let checkpoint = checkpoint.ok_or(CliError::MissingCheckpoint)?;
    let cfg = experiment_config(g)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let seqs = load_sequences(&manifest_path(g, flag, &cfg)?)?;
    if let Some(id) = only {
        if !seqs.iter().any(|s| s.id == id) {
            return Err(camsel::Error::Config(format!("sequence `{id}` not in manifest")).into());
        }
    }
    let mut summary = String::new();
    for s in seqs.iter().filter(|s| only.is_none_or(|id| s.id == id)) {
        let preds = sequence_predictions(&ckpt, s)?;
        let mut text = format!("{PREDICTIONS_HEADER}\n");
        for (t, c) in &preds {
            let _ = writeln!(text, "{t},{}", c.0);
        }
        match &g.out {
            Some(out) => {
                let path = out.join("predictions").join(format!("{}.csv", s.id));
                write_artifact(&path, &text)?;
                let _ = writeln!(summary, "{}: {} predictions -> {}", s.id, preds.len(), path.display());
            }
            None => summary.push_str(&text),
        }
    }
    Ok(summary)
}

fn report(g: &GlobalArgs, metrics: &Path, jsonl: bool) -> CliResult<String> {
    let text = fs::read_to_string(metrics).map_err(io_err(format!("reading {}", metrics.display())))?;
    let report = MetricsReport::from_json(&text)?;
    let rendered = if jsonl { report.json_lines() } else { report.render_text() };
    if let Some(out) = &g.out {
        write_artifact(&out.join(if jsonl { "records.jsonl" } else { "report.txt" }), &rendered)?;
    }
    Ok(rendered)
}
