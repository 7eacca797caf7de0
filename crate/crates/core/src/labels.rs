//! Best-camera label records, the labels file format, and multi-annotator
//! conflict resolution.
//!
//! Labels file: UTF-8, one record per line, fields in fixed order
//! `timestamp,camera,annotator,resolved`. Lines starting with `#` are
//! comments. Annotator ids may not contain commas or line breaks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CameraId;
use crate::error::{Error, Result};

pub const LABELS_HEADER: &str = "# camsel-labels 1: timestamp,camera,annotator,resolved";

/// Annotator id used for records resolved by agreement of all annotators.
pub const CONSENSUS: &str = "consensus";
/// Annotator id used for records produced by a majority vote.
pub const MAJORITY: &str = "majority";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelRecord {
    pub timestamp: u64,
    pub camera: CameraId,
    pub annotator: String,
    pub resolved: bool,
}

impl LabelRecord {
    pub fn new(timestamp: u64, camera: usize, annotator: impl Into<String>, resolved: bool) -> Self {
        Self {
            timestamp,
            camera: CameraId(camera),
            annotator: annotator.into(),
            resolved,
        }
    }
}

/// Parses labels text. `origin` is used in error messages.
pub fn parse_labels(text: &str, origin: &Path) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [ts, cam, annotator, resolved] = fields.as_slice() else {
            return Err(err(format!("expected 4 comma-separated fields, found {}", fields.len())));
        };
        let timestamp = ts
            .parse()
            .map_err(|_| err(format!("field `timestamp`: `{ts}` is not an unsigned integer")))?;
        let camera = cam
            .parse()
            .map_err(|_| err(format!("field `camera`: `{cam}` is not an unsigned integer")))?;
        if annotator.is_empty() {
            return Err(err("field `annotator`: empty".into()));
        }
        let resolved = match *resolved {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(err(format!("field `resolved`: `{other}` is not a boolean"))),
        };
        out.push(LabelRecord::new(timestamp, camera, *annotator, resolved));
    }
    check_single_resolution(&out)?;
    Ok(out)
}

fn check_single_resolution(records: &[LabelRecord]) -> Result<()> {
    let mut by_t: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.resolved) {
        by_t.entry(r.timestamp).or_default().push(&r.annotator);
    }
    match by_t.into_iter().find(|(_, who)| who.len() > 1) {
        Some((timestamp, who)) => Err(Error::Conflict {
            timestamp,
            annotators: who.into_iter().map(String::from).collect(),
        }),
        None => Ok(()),
    }
}

pub fn format_labels(records: &[LabelRecord]) -> String {
    let mut s = String::new();
    writeln!(s, "{LABELS_HEADER}").unwrap();
    for r in records {
        writeln!(s, "{},{},{},{}", r.timestamp, r.camera.0, r.annotator, r.resolved).unwrap();
    }
    s
}

/// Reads a labels file. Two resolved records at one timestamp are a
/// conflict error naming both annotators.
pub fn import_annotations(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading labels {}", path.display()), e))?;
    parse_labels(&text, path)
}

pub fn export_annotations(records: &[LabelRecord], path: &Path) -> Result<()> {
    if records.iter().any(|r| r.annotator.contains([',', '\n', '\r'])) {
        return Err(Error::Domain("annotator ids may not contain commas or line breaks".into()));
    }
    fs::write(path, format_labels(records))
        .map_err(|e| Error::io(format!("writing labels {}", path.display()), e))
}

/// How to settle disagreeing records at one timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResolvePolicy {
    /// Modal camera wins; a tie yields an unresolved record flagged for review.
    Majority,
    /// A reviewer's explicit choice.
    Manual { camera: Option<usize>, reviewer: String },
}

/// Settles the records at one timestamp. A returned record with
/// `resolved == false` is a tie that still needs manual review.
pub fn resolve_conflicts(records: &[LabelRecord], policy: &ResolvePolicy) -> Result<LabelRecord> {
    let Some(first) = records.first() else {
        return Err(Error::Domain("no records to resolve".into()));
    };
    let timestamp = first.timestamp;
    if records.iter().any(|r| r.timestamp != timestamp) {
        return Err(Error::Domain("records to resolve span several timestamps".into()));
    }
    match policy {
        ResolvePolicy::Manual { camera, reviewer } => match camera {
            Some(c) => Ok(LabelRecord::new(timestamp, *c, reviewer.clone(), true)),
            None => Err(Error::Unresolved(timestamp)),
        },
        ResolvePolicy::Majority => {
            if let [only] = records {
                return Ok(LabelRecord {
                    resolved: true,
                    ..only.clone()
                });
            }
            let mut counts: BTreeMap<CameraId, usize> = BTreeMap::new();
            for r in records {
                *counts.entry(r.camera).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            // BTreeMap iteration order gives the lowest tied camera first
            let mut modal = counts.iter().filter(|(_, &n)| n == top).map(|(c, _)| *c);
            let camera = modal.next().expect("at least one record");
            let tie = modal.next().is_some();
            Ok(LabelRecord {
                timestamp,
                camera,
                annotator: MAJORITY.into(),
                resolved: !tie,
            })
        }
    }
}

/// One append-only audit entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub serial: u64,
    pub action: String,
    pub timestamp: u64,
    pub annotator: String,
    pub camera: usize,
    /// Display permutation the annotator saw, when known.
    pub permutation: Option<Vec<usize>>,
}

/// Multi-annotator label history with a resolved projection.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelBook {
    votes: BTreeMap<u64, BTreeMap<String, CameraId>>,
    resolutions: BTreeMap<u64, LabelRecord>,
    audit: Vec<AuditEntry>,
}

impl LabelBook {
    pub fn from_records(records: &[LabelRecord]) -> Result<Self> {
        check_single_resolution(records)?;
        let mut book = Self::default();
        for r in records {
            if r.resolved {
                book.resolutions.insert(r.timestamp, r.clone());
            } else {
                book.votes
                    .entry(r.timestamp)
                    .or_default()
                    .insert(r.annotator.clone(), r.camera);
            }
        }
        Ok(book)
    }

    fn log(&mut self, action: &str, timestamp: u64, annotator: &str, camera: usize, permutation: Option<Vec<usize>>) {
        let serial = self.audit.len() as u64;
        self.audit.push(AuditEntry {
            serial,
            action: action.into(),
            timestamp,
            annotator: annotator.into(),
            camera,
            permutation,
        });
    }

    /// Records an annotator's choice. A later submission for the same
    /// (annotator, timestamp) replaces the earlier one; both stay in the audit log.
    pub fn submit(&mut self, annotator: &str, timestamp: u64, camera: CameraId, permutation: Option<Vec<usize>>) {
        self.votes
            .entry(timestamp)
            .or_default()
            .insert(annotator.to_string(), camera);
        self.log("submit", timestamp, annotator, camera.0, permutation);
    }

    pub fn votes_at(&self, timestamp: u64) -> Vec<LabelRecord> {
        self.votes
            .get(&timestamp)
            .map(|m| {
                m.iter()
                    .map(|(a, c)| LabelRecord {
                        timestamp,
                        camera: *c,
                        annotator: a.clone(),
                        resolved: false,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Resolved record at a timestamp: an explicit resolution, or the
    /// shared choice when every annotator agrees.
    pub fn resolved_at(&self, timestamp: u64) -> Option<LabelRecord> {
        if let Some(r) = self.resolutions.get(&timestamp) {
            return Some(r.clone());
        }
        let votes = self.votes.get(&timestamp)?;
        let mut cams = votes.values();
        let first = *cams.next()?;
        if cams.all(|c| *c == first) {
            let annotator = if votes.len() == 1 {
                votes.keys().next().cloned().unwrap_or_default()
            } else {
                CONSENSUS.to_string()
            };
            Some(LabelRecord {
                timestamp,
                camera: first,
                annotator,
                resolved: true,
            })
        } else {
            None
        }
    }

    /// Timestamps whose annotators disagree and that have no resolution.
    pub fn conflicts(&self) -> Vec<(u64, Vec<LabelRecord>)> {
        self.votes
            .keys()
            .filter(|t| self.resolved_at(**t).is_none())
            .map(|t| (*t, self.votes_at(*t)))
            .collect()
    }

    /// Applies a policy to the votes at `timestamp`. Ties under the
    /// majority policy are returned unresolved and not stored.
    pub fn resolve(&mut self, timestamp: u64, policy: &ResolvePolicy) -> Result<LabelRecord> {
        let votes = self.votes_at(timestamp);
        if votes.is_empty() {
            return Err(Error::Domain(format!("no votes at t={timestamp}")));
        }
        let record = resolve_conflicts(&votes, policy)?;
        if record.resolved {
            self.resolutions.insert(timestamp, record.clone());
            self.log("resolve", timestamp, &record.annotator, record.camera.0, None);
        }
        Ok(record)
    }

    pub fn labeled_by(&self, annotator: &str) -> usize {
        self.votes.values().filter(|m| m.contains_key(annotator)).count()
    }

    pub fn has_vote(&self, annotator: &str, timestamp: u64) -> bool {
        self.votes
            .get(&timestamp)
            .is_some_and(|m| m.contains_key(annotator))
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Full record list: every annotator's latest vote, followed at each
    /// timestamp by the resolved record when one exists.
    pub fn records(&self) -> Vec<LabelRecord> {
        let mut ts: Vec<u64> = self.votes.keys().chain(self.resolutions.keys()).copied().collect();
        ts.sort_unstable();
        ts.dedup();
        let mut out = Vec::new();
        for t in ts {
            out.extend(self.votes_at(t));
            out.extend(self.resolved_at(t));
        }
        out
    }

    pub fn resolved_records(&self) -> Vec<LabelRecord> {
        self.records().into_iter().filter(|r| r.resolved).collect()
    }
}
