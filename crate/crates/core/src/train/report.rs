use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::protocol::{ProtocolKind, RunRow};
use crate::error::{Error, Result};
use crate::features::FeatureMode;

/// One protocol run: a row per target sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: ProtocolKind,
    pub mode: FeatureMode,
    pub seed: u64,
    pub fingerprint: String,
    pub rows: Vec<RunRow>,
}

impl ProtocolReport {
    /// Rows are kept sorted by target id so merged results do not depend
    /// on execution order.
    pub fn new(protocol: ProtocolKind, mode: FeatureMode, seed: u64, fingerprint: String, mut rows: Vec<RunRow>) -> Self {
        rows.sort_by(|a, b| a.target.cmp(&b.target));
        Self {
            protocol,
            mode,
            seed,
            fingerprint,
            rows,
        }
    }

    /// Mean of the per-target temporal accuracies.
    pub fn average(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.temporal.accuracy))
    }

    pub fn baseline_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.rows.iter().flat_map(|r| r.baselines.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn baseline_average(&self, name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.baselines.get(name).map(|e| e.accuracy))
            .collect();
        (!v.is_empty()).then(|| mean(v.into_iter()))
    }

    pub fn chance_average(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.temporal.chance_rate))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn method_label(name: &str) -> &str {
    match name {
        "per_frame" => "Per-frame",
        "area_dijkstra" => "Area+Dijkstra",
        other => other,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reports: Vec<ProtocolReport>,
}

impl MetricsReport {
    /// One table per report: methods down, target sequences across, then
    /// the average.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{} (features: {}, seed {}, fingerprint {})",
                r.protocol.title(),
                r.mode.name(),
                r.seed,
                r.fingerprint
            );
            let width = r.rows.iter().map(|row| row.target.len()).max().unwrap_or(0).max(7);
            let mut header = format!("{:<14}", "Method");
            for row in &r.rows {
                let _ = write!(header, " | {:>width$}", row.target);
            }
            let _ = write!(header, " | {:>width$}", "Average");
            let _ = writeln!(out, "{header}");
            let _ = writeln!(out, "{}", "-".repeat(header.len()));
            let line = |out: &mut String, label: &str, cells: Vec<Option<f64>>, avg: f64| {
                let mut s = format!("{label:<14}");
                for c in cells {
                    match c {
                        Some(v) => {
                            let _ = write!(s, " | {v:>width$.3}");
                        }
                        None => {
                            let _ = write!(s, " | {:>width$}", "-");
                        }
                    }
                }
                let _ = writeln!(out, "{s} | {avg:>width$.3}");
            };
            line(&mut out, "Ours", r.rows.iter().map(|x| Some(x.temporal.accuracy)).collect(), r.average());
            for name in r.baseline_names() {
                let cells = r.rows.iter().map(|x| x.baselines.get(&name).map(|e| e.accuracy)).collect();
                line(&mut out, method_label(&name), cells, r.baseline_average(&name).unwrap_or(0.0));
            }
            line(&mut out, "Chance rate", r.rows.iter().map(|x| Some(x.temporal.chance_rate)).collect(), r.chance_average());
            out.push('\n');
        }
        out
    }

    /// Machine-readable records, one JSON object per line.
    pub fn json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let base = json!({
                "protocol": r.protocol,
                "mode": r.mode,
                "seed": r.seed,
                "fingerprint": r.fingerprint,
            });
            let with = |extra: serde_json::Value| {
                let mut v = base.clone();
                v.as_object_mut()
                    .expect("object")
                    .extend(extra.as_object().expect("object").clone());
                v.to_string()
            };
            for row in &r.rows {
                let methods = std::iter::once(("temporal".to_string(), &row.temporal))
                    .chain(row.baselines.iter().map(|(k, v)| (k.clone(), v)));
                for (method, e) in methods {
                    let _ = writeln!(
                        out,
                        "{}",
                        with(json!({
                            "record": "accuracy",
                            "target": row.target,
                            "method": method,
                            "accuracy": e.accuracy,
                            "correct": e.correct,
                            "steps": e.steps,
                            "chance_rate": e.chance_rate,
                        }))
                    );
                }
                for ep in &row.history.epochs {
                    let _ = writeln!(
                        out,
                        "{}",
                        with(json!({
                            "record": "epoch",
                            "target": row.target,
                            "epoch": ep.epoch,
                            "train_loss": ep.train_loss,
                            "train_accuracy": ep.train_accuracy,
                            "val_loss": ep.val_loss,
                            "val_accuracy": ep.val_accuracy,
                            "lr": ep.lr,
                        }))
                    );
                }
            }
            let _ = writeln!(
                out,
                "{}",
                with(json!({"record": "average", "method": "temporal", "accuracy": r.average()}))
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{Evaluation, History};
    use std::collections::BTreeMap;

    fn row(target: &str, acc: f64) -> RunRow {
        let e = Evaluation {
            correct: (acc * 100.0) as usize,
            steps: 100,
            accuracy: acc,
            chance_rate: 0.3,
        };
        RunRow {
            target: target.into(),
            temporal: e,
            baselines: BTreeMap::from([("per_frame".to_string(), Evaluation { accuracy: 0.5, ..e })]),
            history: History::default(),
            train_sequences: vec![],
            train_windows: 10,
            test_windows: 5,
        }
    }

    #[test]
    fn table_layout() {
        let rows = (1..=5).rev().map(|i| row(&format!("S{i}"), 0.8 + i as f64 * 0.02)).collect();
        let r = ProtocolReport::new(ProtocolKind::SequenceOut, FeatureMode::Full, 0, "ab".into(), rows);
        assert_eq!(r.rows[0].target, "S1");
        assert!((r.average() - 0.86).abs() < 1e-12);
        let m = MetricsReport { reports: vec![r] };
        let text = m.render_text();
        let header = text.lines().nth(1).unwrap();
        assert!(header.starts_with("Method") && header.contains("S1") && header.ends_with("Average"));
        assert!(text.contains("Per-frame") && text.contains("Chance rate"));
        assert_eq!(text.lines().filter(|l| l.starts_with("Ours")).count(), 1);
        assert_eq!(MetricsReport::from_json(&m.to_json().unwrap()).unwrap(), m);
        let lines: Vec<serde_json::Value> = m.json_lines().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 5 * 2 + 1);
        assert_eq!(lines[0]["method"], "temporal");
    }

    #[test]
    fn single_row_average_equals_row() {
        let r = ProtocolReport::new(ProtocolKind::SurgeryOut, FeatureMode::Full, 0, "x".into(), vec![row("A", 0.7)]);
        assert_eq!(r.average(), 0.7);
    }
}
