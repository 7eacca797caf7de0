use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::baseline::{AreaPathPredictor, PerFrameConfig, PerFrameModel};
use super::eval::{evaluate, Evaluation, ModelPredictor};
use super::report::ProtocolReport;
use super::{train, History, MetricsReport, PreparedData, SequenceData, TrainConfig, TrainOutcome};
use crate::dataset::{build_windows, label_histogram, make_split, SplitAssignment, SplitConfig, Window};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::model::{class_weights, ModelConfig, TemporalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Train on every sequence's training partition; validate and test on
    /// the target's validation and test partitions. One run per target.
    SequenceOut,
    /// Train on every frame of the other sequences; validate and test on
    /// the held-out sequence's validation and test partitions.
    SurgeryOut,
    /// One model on every training partition, validated on every
    /// validation partition, tested per sequence. What `train` + `eval` do.
    Pooled,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::SequenceOut => "sequence_out",
            ProtocolKind::SurgeryOut => "surgery_out",
            ProtocolKind::Pooled => "pooled",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ProtocolKind::SequenceOut => "Sequence-Out",
            ProtocolKind::SurgeryOut => "Surgery-Out",
            ProtocolKind::Pooled => "Pooled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    PerFrame,
    AreaDijkstra,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::PerFrame => "per_frame",
            BaselineKind::AreaDijkstra => "area_dijkstra",
        }
    }
}

/// Everything an experiment run depends on, in one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub split: SplitConfig,
    /// Step between consecutive training windows.
    pub stride: usize,
    pub normalize: bool,
    /// `input_dim` and `cameras` are taken from the data at run time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub per_frame: PerFrameConfig,
    pub switch_penalty: f64,
    pub protocols: Vec<ProtocolKind>,
    pub ablations: Vec<FeatureMode>,
    pub seeds: Vec<u64>,
    pub baselines: Vec<BaselineKind>,
    /// Restricts the target (or held-out) sequences; all when absent.
    pub targets: Option<Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            split: SplitConfig::default(),
            stride: 1,
            normalize: true,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            per_frame: PerFrameConfig::default(),
            switch_penalty: 0.5,
            protocols: vec![ProtocolKind::SequenceOut],
            ablations: vec![FeatureMode::Full],
            seeds: vec![0],
            baselines: Vec::new(),
            targets: None,
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a TOML document into `T` after applying `key=value` overrides.
/// Values are TOML literals; anything unparseable is taken as a string.
/// Dotted keys address nested tables.
pub fn parse_config<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::Config(format!("override `{o}` is not key=value")));
        };
        let v = v.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        set_path(&mut root, k.trim(), value)?;
    }
    toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))
}

/// Experiment config from TOML plus overrides. Unknown keys are rejected
/// by the schema.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = parse_config(text, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        apply_overrides(text, &[])
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.seeds.is_empty() || self.ablations.is_empty() {
            return Err(Error::Config("seeds and ablations must be nonempty".into()));
        }
        if !(self.switch_penalty >= 0.0 && self.switch_penalty.is_finite()) {
            return Err(Error::Config("switch_penalty must be finite and nonnegative".into()));
        }
        self.train.validate()?;
        // input_dim is filled in from data, so check the rest with a stand-in
        ModelConfig {
            input_dim: self.model.input_dim.max(1),
            ..self.model.clone()
        }
        .validate()
    }
}

/// Hex digest over the full config plus the run coordinates.
pub fn fingerprint(cfg: &ExperimentConfig, protocol: ProtocolKind, mode: FeatureMode, seed: u64) -> String {
    let doc = serde_json::json!({
        "config": cfg,
        "protocol": protocol,
        "mode": mode,
        "seed": seed,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Fails if any training window comes from the held-out sequence.
pub fn check_leakage(train_windows: &[Window], held_out: &str) -> Result<()> {
    match train_windows.iter().find(|w| w.sequence_id == held_out) {
        Some(w) => Err(Error::Protocol(format!(
            "leakage: training window at frames {:?} comes from held-out sequence {held_out}",
            w.input_span.start..w.target_span.end
        ))),
        None => Ok(()),
    }
}

/// One evaluated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub target: String,
    pub temporal: Evaluation,
    pub baselines: BTreeMap<String, Evaluation>,
    pub history: History,
    pub train_sequences: Vec<String>,
    pub train_windows: usize,
    pub test_windows: usize,
}

struct Plan {
    train: Vec<Window>,
    val: Vec<Window>,
    test: Vec<Window>,
    /// Frames that feed the normalizer, class weights and the per-frame baseline.
    train_frames: BTreeMap<String, Vec<usize>>,
    val_frames: BTreeMap<String, Vec<usize>>,
    test_frames: BTreeMap<String, Vec<usize>>,
}

fn splits(data: &[SequenceData], cfg: &ExperimentConfig) -> Result<BTreeMap<String, SplitAssignment>> {
    data.iter()
        .map(|d| Ok((d.id().to_string(), make_split(&d.sequence, &cfg.split)?)))
        .collect()
}

fn windows(d: &SequenceData, frames: &[usize], cfg: &ExperimentConfig, stride: usize) -> Vec<Window> {
    build_windows(&d.sequence, frames, cfg.model.lookback, cfg.model.horizon, stride)
}

fn targets(data: &[SequenceData], cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let ids: Vec<String> = data.iter().map(|d| d.id().to_string()).collect();
    match &cfg.targets {
        None => Ok(ids),
        Some(t) => {
            if let Some(bad) = t.iter().find(|t| !ids.contains(t)) {
                return Err(Error::Config(format!("target sequence `{bad}` not in dataset")));
            }
            Ok(t.clone())
        }
    }
}

fn check_unique(data: &[SequenceData]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for d in data {
        if !seen.insert(d.id()) {
            return Err(Error::Integrity(format!("duplicate sequence id {}", d.id())));
        }
    }
    Ok(())
}

fn sequence_out_plan(data: &[SequenceData], cfg: &ExperimentConfig, sp: &BTreeMap<String, SplitAssignment>, target: &str) -> Plan {
    let mut train = Vec::new();
    let mut train_frames = BTreeMap::new();
    for d in data {
        let s = &sp[d.id()];
        train.extend(windows(d, &s.train, cfg, cfg.stride));
        train_frames.insert(d.id().to_string(), s.train.clone());
    }
    let t = data.iter().find(|d| d.id() == target).expect("validated target");
    let s = &sp[target];
    Plan {
        train,
        val: windows(t, &s.validation, cfg, 1),
        test: windows(t, &s.test, cfg, 1),
        train_frames,
        val_frames: BTreeMap::from([(target.to_string(), s.validation.clone())]),
        test_frames: BTreeMap::from([(target.to_string(), s.test.clone())]),
    }
}

fn surgery_out_plan(data: &[SequenceData], cfg: &ExperimentConfig, sp: &BTreeMap<String, SplitAssignment>, held_out: &str) -> Result<Plan> {
    let mut train = Vec::new();
    let mut train_frames = BTreeMap::new();
    for d in data.iter().filter(|d| d.id() != held_out) {
        let all: Vec<usize> = (0..d.len()).collect();
        train.extend(windows(d, &all, cfg, cfg.stride));
        train_frames.insert(d.id().to_string(), all);
    }
    check_leakage(&train, held_out)?;
    let h = data.iter().find(|d| d.id() == held_out).expect("validated target");
    let s = &sp[held_out];
    Ok(Plan {
        train,
        val: windows(h, &s.validation, cfg, 1),
        test: windows(h, &s.test, cfg, 1),
        train_frames,
        val_frames: BTreeMap::from([(held_out.to_string(), s.validation.clone())]),
        test_frames: BTreeMap::from([(held_out.to_string(), s.test.clone())]),
    })
}

fn frame_list(frames: &BTreeMap<String, Vec<usize>>) -> Vec<(String, usize)> {
    frames
        .iter()
        .flat_map(|(id, f)| f.iter().map(move |&t| (id.clone(), t)))
        .collect()
}

/// Builds the model config for this data and ablation.
pub(crate) fn model_config(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode) -> ModelConfig {
    let dims = data[0].dims;
    ModelConfig {
        input_dim: mode.width(&dims),
        cameras: dims.cameras,
        ..cfg.model.clone()
    }
}

/// A trained temporal model with the inputs it was trained on.
pub struct Trained {
    pub outcome: TrainOutcome,
    pub prepared: PreparedData,
}

fn train_plan(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode, seed: u64, plan: &Plan) -> Result<(Trained, crate::model::ClassWeights)> {
    let prepared = PreparedData::new(data, mode, &plan.train_frames, cfg.normalize)?;
    let cameras = data[0].dims.cameras;
    let mut hist = vec![0usize; cameras];
    for (id, frames) in &plan.train_frames {
        let labels = prepared.labels(id);
        let sel: Vec<_> = frames.iter().map(|&t| labels[t]).collect();
        for (h, c) in hist.iter_mut().zip(label_histogram(&sel, cameras)) {
            *h += c;
        }
    }
    let weights = class_weights(&hist)?;
    let model = TemporalModel::new(model_config(data, cfg, mode), seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let outcome = train(model, &prepared, &plan.train, &plan.val, &tc, &weights)?;
    Ok((Trained { outcome, prepared }, weights))
}

fn execute(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode, seed: u64, target: &str, plan: Plan) -> Result<RunRow> {
    if plan.test.is_empty() {
        return Err(Error::Protocol(format!("target {target}: test partition yields no windows")));
    }
    let (trained, weights) = train_plan(data, cfg, mode, seed, &plan)?;
    let prepared = &trained.prepared;
    let temporal = evaluate(
        &ModelPredictor {
            model: &trained.outcome.model,
            data: prepared,
        },
        &plan.test,
        prepared,
    )?;
    let mut baselines = BTreeMap::new();
    for b in &cfg.baselines {
        let e = match b {
            BaselineKind::PerFrame => {
                let pf = PerFrameConfig {
                    seed,
                    ..cfg.per_frame.clone()
                };
                let m = PerFrameModel::train(
                    prepared,
                    &frame_list(&plan.train_frames),
                    &frame_list(&plan.val_frames),
                    data[0].dims.cameras,
                    &pf,
                    &weights,
                )?;
                evaluate(&m.predictor(prepared), &plan.test, prepared)?
            }
            BaselineKind::AreaDijkstra => {
                let p = AreaPathPredictor::new(data, &plan.test_frames, cfg.switch_penalty)?;
                evaluate(&p, &plan.test, prepared)?
            }
        };
        baselines.insert(b.name().to_string(), e);
    }
    let mut train_sequences: Vec<String> = plan.train.iter().map(|w| w.sequence_id.clone()).collect();
    train_sequences.dedup();
    Ok(RunRow {
        target: target.to_string(),
        temporal,
        baselines,
        history: trained.outcome.history,
        train_sequences,
        train_windows: plan.train.len(),
        test_windows: plan.test.len(),
    })
}

pub fn run_sequence_out(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode, seed: u64) -> Result<ProtocolReport> {
    if data.is_empty() {
        return Err(Error::Config("Sequence-Out needs at least one labeled sequence".into()));
    }
    check_unique(data)?;
    let sp = splits(data, cfg)?;
    let mut rows = Vec::new();
    for target in targets(data, cfg)? {
        let plan = sequence_out_plan(data, cfg, &sp, &target);
        rows.push(execute(data, cfg, mode, seed, &target, plan)?);
    }
    Ok(ProtocolReport::new(ProtocolKind::SequenceOut, mode, seed, fingerprint(cfg, ProtocolKind::SequenceOut, mode, seed), rows))
}

pub fn run_surgery_out(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode, seed: u64) -> Result<ProtocolReport> {
    if data.len() < 2 {
        return Err(Error::Config("Surgery-Out needs at least two labeled sequences".into()));
    }
    check_unique(data)?;
    let sp = splits(data, cfg)?;
    let mut rows = Vec::new();
    for held_out in targets(data, cfg)? {
        let plan = surgery_out_plan(data, cfg, &sp, &held_out)?;
        let row = execute(data, cfg, mode, seed, &held_out, plan)?;
        if row.train_sequences.contains(&held_out) {
            return Err(Error::Protocol(format!("leakage: {held_out} among training sequences")));
        }
        rows.push(row);
    }
    Ok(ProtocolReport::new(ProtocolKind::SurgeryOut, mode, seed, fingerprint(cfg, ProtocolKind::SurgeryOut, mode, seed), rows))
}

/// One model trained on every sequence's training partition and
/// validated on every validation partition.
pub fn train_pooled(data: &[SequenceData], cfg: &ExperimentConfig, mode: FeatureMode, seed: u64) -> Result<Trained> {
    if data.is_empty() {
        return Err(Error::Config("no labeled sequences".into()));
    }
    check_unique(data)?;
    let sp = splits(data, cfg)?;
    let mut plan = Plan {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_frames: BTreeMap::new(),
        val_frames: BTreeMap::new(),
        test_frames: BTreeMap::new(),
    };
    for d in data {
        let s = &sp[d.id()];
        plan.train.extend(windows(d, &s.train, cfg, cfg.stride));
        plan.val.extend(windows(d, &s.validation, cfg, 1));
        plan.train_frames.insert(d.id().to_string(), s.train.clone());
    }
    Ok(train_plan(data, cfg, mode, seed, &plan)?.0)
}

/// Per-sequence test-partition accuracy of an already trained model.
pub fn evaluate_pooled(
    data: &[SequenceData],
    cfg: &ExperimentConfig,
    model: &TemporalModel,
    prepared: &PreparedData,
    seed: u64,
) -> Result<ProtocolReport> {
    let sp = splits(data, cfg)?;
    let mut rows = Vec::new();
    for target in targets(data, cfg)? {
        let d = data.iter().find(|d| d.id() == target).expect("validated target");
        let s = &sp[&target];
        let test = windows(d, &s.test, cfg, 1);
        if test.is_empty() {
            return Err(Error::Protocol(format!("target {target}: test partition yields no windows")));
        }
        let mut baselines = BTreeMap::new();
        if cfg.baselines.contains(&BaselineKind::AreaDijkstra) {
            let p = AreaPathPredictor::new(data, &BTreeMap::from([(target.clone(), s.test.clone())]), cfg.switch_penalty)?;
            baselines.insert(BaselineKind::AreaDijkstra.name().to_string(), evaluate(&p, &test, prepared)?);
        }
        rows.push(RunRow {
            target: target.clone(),
            temporal: evaluate(&ModelPredictor { model, data: prepared }, &test, prepared)?,
            baselines,
            history: History::default(),
            train_sequences: Vec::new(),
            train_windows: 0,
            test_windows: test.len(),
        });
    }
    Ok(ProtocolReport::new(
        ProtocolKind::Pooled,
        prepared.mode,
        seed,
        fingerprint(cfg, ProtocolKind::Pooled, prepared.mode, seed),
        rows,
    ))
}

/// Every configured protocol × ablation × seed, in that order.
pub fn run_experiment(data: &[SequenceData], cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let mut reports = Vec::new();
    for &protocol in &cfg.protocols {
        for &mode in &cfg.ablations {
            for &seed in &cfg.seeds {
                reports.push(match protocol {
                    ProtocolKind::SequenceOut => run_sequence_out(data, cfg, mode, seed)?,
                    ProtocolKind::SurgeryOut => run_surgery_out(data, cfg, mode, seed)?,
                    ProtocolKind::Pooled => {
                        let t = train_pooled(data, cfg, mode, seed)?;
                        let mut r = evaluate_pooled(data, cfg, &t.outcome.model, &t.prepared, seed)?;
                        for row in &mut r.rows {
                            row.history = t.outcome.history.clone();
                        }
                        r
                    }
                });
            }
        }
    }
    Ok(MetricsReport { reports })
}
