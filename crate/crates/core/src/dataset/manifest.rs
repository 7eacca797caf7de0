//! Line-oriented dataset manifest.
//!
//! ```text
//! manifest  := header { line }
//! header    := "camsel-manifest 1" NL
//! line      := ( blank | comment | directive ) NL
//! comment   := "#" { any }
//! directive := "sequence" ID
//!            | "cameras" UINT
//!            | "fps" FLOAT
//!            | "synthetic" ( "true" | "false" )
//!            | "labels" PATH
//!            | "features" PATH
//!            | "detections" PATH
//!            | "meta" KEY { WORD }
//!            | "frame" UINT URI{N}
//!            | "end"
//! ```
//!
//! Tokens are separated by ASCII whitespace, so URIs and paths cannot
//! contain spaces. Every `sequence` block is closed by `end`; `cameras`
//! (default 6) must precede the first `frame` of its block. Relative paths
//! resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{FrameSet, ImageRef, SurgerySequence, DEFAULT_CAMERAS, DEFAULT_FPS};
use crate::error::{Error, Result};
use crate::labels::import_annotations;

pub const MANIFEST_HEADER: &str = "camsel-manifest 1";

struct Block {
    seq: SurgerySequence,
    cameras_line: Option<usize>,
}

/// Loads and validates every sequence declared in a manifest, including
/// each sequence's labels file when one is named.
pub fn load_manifest(path: &Path) -> Result<Vec<SurgerySequence>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{MANIFEST_HEADER}`"))),
    }

    let mut out = Vec::new();
    let mut current: Option<Block> = None;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_ascii_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        let one = |field: &str| -> Result<&str> {
            match rest.as_slice() {
                [v] => Ok(*v),
                _ => Err(parse_err(lineno, format!("`{field}` expects exactly one value"))),
            }
        };

        if keyword == "sequence" {
            if current.is_some() {
                return Err(parse_err(lineno, "`sequence` before `end` of previous block".into()));
            }
            let id = one("sequence")?;
            let mut seq = SurgerySequence::new(id, DEFAULT_CAMERAS, Vec::new());
            seq.base_dir = base.clone();
            current = Some(Block {
                seq,
                cameras_line: None,
            });
            continue;
        }
        let Some(block) = current.as_mut() else {
            return Err(parse_err(lineno, format!("`{keyword}` outside a sequence block")));
        };
        let seq = &mut block.seq;
        match keyword {
            "cameras" => {
                if !seq.frame_sets.is_empty() {
                    return Err(parse_err(lineno, "`cameras` after the first `frame`".into()));
                }
                let n: usize = one("cameras")?
                    .parse()
                    .map_err(|_| parse_err(lineno, "field `cameras`: not an unsigned integer".into()))?;
                if n == 0 {
                    return Err(parse_err(lineno, "field `cameras`: must be positive".into()));
                }
                seq.cameras = n;
                block.cameras_line = Some(lineno);
            }
            "fps" => {
                seq.source_fps = one("fps")?
                    .parse()
                    .map_err(|_| parse_err(lineno, "field `fps`: not a number".into()))?;
            }
            "synthetic" => {
                seq.synthetic = match one("synthetic")? {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(parse_err(lineno, format!("field `synthetic`: `{other}` is not a boolean")))
                    }
                };
            }
            "labels" => seq.labels_path = Some(base.join(one("labels")?)),
            "features" => seq.features_path = Some(base.join(one("features")?)),
            "detections" => seq.detections_path = Some(base.join(one("detections")?)),
            "meta" => {
                let Some((key, value)) = rest.split_first() else {
                    return Err(parse_err(lineno, "`meta` expects a key".into()));
                };
                seq.metadata.insert((*key).to_string(), value.join(" "));
            }
            "frame" => {
                let Some((ts, uris)) = rest.split_first() else {
                    return Err(parse_err(lineno, "`frame` expects a timestamp".into()));
                };
                let timestamp: u64 = ts
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("field `timestamp`: `{ts}` is not an unsigned integer")))?;
                if uris.len() > seq.cameras {
                    return Err(parse_err(
                        lineno,
                        format!("frame t={timestamp}: {} image references for {} cameras", uris.len(), seq.cameras),
                    ));
                }
                if uris.len() < seq.cameras {
                    return Err(Error::Integrity(format!(
                        "{}:{lineno}: frame t={timestamp}: camera {} stream missing ({} of {} images)",
                        path.display(),
                        uris.len(),
                        uris.len(),
                        seq.cameras
                    )));
                }
                if let Some(last) = seq.frame_sets.last() {
                    if timestamp <= last.timestamp {
                        return Err(parse_err(
                            lineno,
                            format!("frame t={timestamp}: timestamps must be strictly increasing"),
                        ));
                    }
                }
                seq.frame_sets.push(FrameSet {
                    timestamp,
                    images: uris.iter().map(|u| ImageRef((*u).to_string())).collect(),
                });
            }
            "end" => {
                let mut block = current.take().expect("block checked above");
                if let Some(labels) = &block.seq.labels_path {
                    block.seq.labels = import_annotations(labels)?;
                }
                block.seq.validate()?;
                out.push(block.seq);
            }
            other => return Err(parse_err(lineno, format!("unknown directive `{other}`"))),
        }
    }
    if let Some(block) = current {
        return Err(parse_err(
            text.lines().count(),
            format!("sequence {} not closed with `end`", block.seq.id),
        ));
    }
    Ok(out)
}

/// Writes a manifest for `sequences`. Label, feature and detection paths
/// are written relative to `dir` when possible.
pub fn write_manifest(path: &Path, sequences: &[SurgerySequence]) -> Result<()> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let rel = |p: &PathBuf| -> String {
        p.strip_prefix(&dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut s = String::new();
    writeln!(s, "{MANIFEST_HEADER}").unwrap();
    for seq in sequences {
        writeln!(s, "sequence {}", seq.id).unwrap();
        writeln!(s, "cameras {}", seq.cameras).unwrap();
        if seq.source_fps != DEFAULT_FPS {
            writeln!(s, "fps {}", seq.source_fps).unwrap();
        }
        writeln!(s, "synthetic {}", seq.synthetic).unwrap();
        let meta: &BTreeMap<String, String> = &seq.metadata;
        for (k, v) in meta {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        if let Some(p) = &seq.labels_path {
            writeln!(s, "labels {}", rel(p)).unwrap();
        }
        if let Some(p) = &seq.features_path {
            writeln!(s, "features {}", rel(p)).unwrap();
        }
        if let Some(p) = &seq.detections_path {
            writeln!(s, "detections {}", rel(p)).unwrap();
        }
        for f in &seq.frame_sets {
            write!(s, "frame {}", f.timestamp).unwrap();
            for img in &f.images {
                write!(s, " {img}").unwrap();
            }
            s.push('\n');
        }
        writeln!(s, "end").unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}
