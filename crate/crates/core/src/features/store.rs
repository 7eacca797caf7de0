//! Feature store container.
//!
//! A UTF-8 text header, one `key value` pair per line, terminated by a line
//! reading `end`:
//!
//! ```text
//! camsel-features 1
//! sequence <id>
//! extractor <id>
//! cameras <N>
//! visual_dim <Dv>
//! semantic_dim <Ds>
//! timesteps <T>
//! end
//! ```
//!
//! followed by `T` records, each a little-endian `u32` timestep index and
//! `N*Dv + N*Ds` little-endian `f32` values in fused (row-major) order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::FeatureDims;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &str = "camsel-features 1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub sequence_id: String,
    pub extractor_id: String,
    pub dims: FeatureDims,
    /// One fused vector per timestep index.
    pub rows: Vec<Vec<f32>>,
}

impl FeatureStore {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Writes the store. Fails if any row has the wrong length.
pub fn cache_features(store: &FeatureStore, path: &Path) -> Result<()> {
    let width = store.dims.fused_len();
    if let Some((t, r)) = store.rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Integrity(format!(
            "timestep {t}: fused vector has {} values, expected {width}",
            r.len()
        )));
    }
    for (name, v) in [("sequence", &store.sequence_id), ("extractor", &store.extractor_id)] {
        if v.is_empty() || v.contains(char::is_whitespace) {
            return Err(Error::Domain(format!("{name} id `{v}` must be a single non-empty token")));
        }
    }
    let mut buf = Vec::with_capacity(256 + store.rows.len() * (4 + width * 4));
    let header = format!(
        "{STORE_MAGIC}\nsequence {}\nextractor {}\ncameras {}\nvisual_dim {}\nsemantic_dim {}\ntimesteps {}\nend\n",
        store.sequence_id,
        store.extractor_id,
        store.dims.cameras,
        store.dims.visual_dim,
        store.dims.semantic_dim,
        store.rows.len()
    );
    buf.extend_from_slice(header.as_bytes());
    for (t, row) in store.rows.iter().enumerate() {
        buf.extend_from_slice(&(t as u32).to_le_bytes());
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

/// Reads a store. When `expected` is given, the stored dimensions must
/// match it. Missing timesteps are reported by index.
pub fn load_features(path: &Path, expected: Option<&FeatureDims>) -> Result<FeatureStore> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = BufReader::new(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut lineno = 0;
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        lineno += 1;
        if n == 0 {
            return Err(parse_err(lineno, "header not terminated by `end`".into()));
        }
        let line = line.trim_end_matches('\n');
        if lineno == 1 {
            if line != STORE_MAGIC {
                return Err(parse_err(1, format!("expected `{STORE_MAGIC}`")));
            }
            continue;
        }
        if line == "end" {
            break;
        }
        let Some((k, v)) = line.split_once(' ') else {
            return Err(parse_err(lineno, format!("malformed header line `{line}`")));
        };
        header.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| header.get(k).ok_or_else(|| parse_err(lineno, format!("header field `{k}` missing")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| parse_err(lineno, format!("header field `{k}` is not an unsigned integer")))
    };
    let dims = FeatureDims {
        cameras: num("cameras")?,
        visual_dim: num("visual_dim")?,
        semantic_dim: num("semantic_dim")?,
    };
    let timesteps = num("timesteps")?;
    if let Some(exp) = expected {
        if *exp != dims {
            return Err(Error::Integrity(format!(
                "{}: stored dims {dims:?} do not match expected {exp:?}",
                path.display()
            )));
        }
    }

    let width = dims.fused_len();
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let record = 4 + 4 * width;
    if body.len() % record != 0 {
        return Err(Error::Integrity(format!(
            "{}: trailing {} bytes do not form a whole record",
            path.display(),
            body.len() % record
        )));
    }
    let mut rows: Vec<Option<Vec<f32>>> = vec![None; timesteps];
    for chunk in body.chunks_exact(record) {
        let t = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes")) as usize;
        if t >= timesteps {
            return Err(Error::Integrity(format!("record for timestep {t} beyond declared {timesteps}")));
        }
        let row = chunk[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        rows[t] = Some(row);
    }
    let missing: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(t, _)| t)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Integrity(format!(
            "{}: missing timesteps {}",
            path.display(),
            compact_ranges(&missing)
        )));
    }
    Ok(FeatureStore {
        sequence_id: get("sequence")?.clone(),
        extractor_id: get("extractor")?.clone(),
        dims,
        rows: rows.into_iter().map(|r| r.expect("checked")).collect(),
    })
}

/// `[1,2,3,7]` → `"1-3, 7"`.
fn compact_ranges(v: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[j] + 1 {
            j += 1;
        }
        parts.push(if i == j {
            v[i].to_string()
        } else {
            format!("{}-{}", v[i], v[j])
        });
        i = j + 1;
    }
    parts.join(", ")
}
