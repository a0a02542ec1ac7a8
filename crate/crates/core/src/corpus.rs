//! Dataset manifest, feature matrices and the indicator score cache.
//!
//! On-disk formats:
//! - manifest: one JSON object per line with `id`, `image_path`,
//!   `instruction`, `response`;
//! - feature / embedding matrix: a header line `id <dim>` followed by rows
//!   `id v1 … vdim`, whitespace separated;
//! - score cache: one JSON object per line with `id` and any of `clip`,
//!   `length`, `reward`, `gpt`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Feature matrices every corpus must provide.
pub const IMAGE: &str = "image";
pub const TEXT_CLIP: &str = "text_clip";
pub const TEXT_LLM: &str = "text_llm";
pub const REQUIRED_MATRICES: [&str; 3] = [IMAGE, TEXT_CLIP, TEXT_LLM];

/// One instruction sample: image reference, instruction and response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    #[serde(rename = "image_path")]
    pub image_ref: String,
    pub instruction: String,
    pub response: String,
}

#[derive(Deserialize)]
struct RawTriplet {
    id: Option<String>,
    image_path: Option<String>,
    instruction: Option<String>,
    response: Option<String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses a manifest. File order is the canonical order used for every
/// downstream tie-break.
pub fn parse_manifest(text: &str, source: &Path) -> Result<Vec<Triplet>> {
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: source.to_path_buf(),
        line,
        reason,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTriplet =
            serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
        let field = |v: Option<String>, name: &str| {
            v.ok_or_else(|| malformed(lineno, format!("missing field `{name}`")))
        };
        let t = Triplet {
            id: field(raw.id, "id")?,
            image_ref: field(raw.image_path, "image_path")?,
            instruction: field(raw.instruction, "instruction")?,
            response: field(raw.response, "response")?,
        };
        if t.id.is_empty() || t.id.chars().any(char::is_whitespace) {
            return Err(malformed(lineno, format!("invalid id {:?}", t.id)));
        }
        if !seen.insert(t.id.clone()) {
            return Err(Error::DuplicateId(t.id));
        }
        if t.response.trim().is_empty() {
            return Err(Error::EmptyResponse(t.id));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    parse_manifest(&read_text(path)?, path)
}

pub fn write_manifest(path: impl AsRef<Path>, triplets: &[Triplet]) -> Result<()> {
    let mut buf = String::new();
    for t in triplets {
        buf.push_str(&serde_json::to_string(t).expect("triplet serializes"));
        buf.push('\n');
    }
    write_atomic(path.as_ref(), buf.as_bytes())
}

/// A matrix whose rows are keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMatrix {
    pub ids: Vec<String>,
    pub values: Matrix,
}

impl IdMatrix {
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

/// Reads the `id <dim>` text matrix format. Rows stay in file order.
pub fn read_matrix(path: impl AsRef<Path>, name: &str) -> Result<IdMatrix> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let malformed = |line: usize, reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "missing `id <dim>` header".into()))?;
    let mut head = header.split_whitespace();
    let dim = match (head.next(), head.next(), head.next()) {
        (Some("id"), Some(d), None) => d
            .parse::<usize>()
            .map_err(|_| malformed(1, format!("bad dimension {d:?}")))?,
        _ => return Err(malformed(1, format!("bad header {header:?}"))),
    };

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let mut fields = line.split_whitespace();
        let id = fields.next().expect("nonblank line").to_string();
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(idx + 1, format!("{e} in row {id:?}")))?;
        if row.len() != dim {
            return Err(Error::dims(dim, row.len(), format!("{name} row {id:?}")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                id,
                matrix: name.to_string(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(malformed(idx + 1, format!("duplicate row id {id:?}")));
        }
        ids.push(id);
        data.extend(row);
    }
    Ok(IdMatrix {
        values: Matrix::from_vec(ids.len(), dim, data),
        ids,
    })
}

/// Writes the `id <dim>` text format. Values use the shortest decimal
/// representation that parses back to the same `f64`.
pub fn write_matrix(path: impl AsRef<Path>, m: &IdMatrix) -> Result<()> {
    let mut buf = format!("id {}\n", m.dim());
    for (id, row) in m.ids.iter().zip(m.values.iter_rows()) {
        buf.push_str(id);
        for v in row {
            buf.push(' ');
            buf.push_str(&v.to_string());
        }
        buf.push('\n');
    }
    write_atomic(path.as_ref(), buf.as_bytes())
}

/// Named feature matrices aligned to manifest order: row `i` of every matrix
/// belongs to manifest entry `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    ids: Vec<String>,
    matrices: BTreeMap<String, Matrix>,
}

impl FeatureStore {
    /// Builds a store from matrices already in manifest order.
    pub fn from_matrices(
        manifest: &[Triplet],
        matrices: impl IntoIterator<Item = (String, Matrix)>,
    ) -> Result<Self> {
        let ids: Vec<String> = manifest.iter().map(|t| t.id.clone()).collect();
        let matrices: BTreeMap<String, Matrix> = matrices.into_iter().collect();
        for (name, m) in &matrices {
            if m.rows() != ids.len() {
                return Err(Error::dims(ids.len(), m.rows(), format!("{name} row count")));
            }
            for (i, r) in m.iter_rows().enumerate() {
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteFeature {
                        id: ids[i].clone(),
                        matrix: name.clone(),
                    });
                }
            }
        }
        for name in REQUIRED_MATRICES {
            if !matrices.contains_key(name) {
                let id = ids.first().cloned().unwrap_or_default();
                return Err(Error::MissingFeature {
                    id,
                    matrix: name.to_string(),
                });
            }
        }
        Ok(Self { ids, matrices })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.matrices.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.matrices.keys().map(String::as_str)
    }

    pub fn image(&self) -> &Matrix {
        &self.matrices[IMAGE]
    }

    pub fn text_clip(&self) -> &Matrix {
        &self.matrices[TEXT_CLIP]
    }

    pub fn text_llm(&self) -> &Matrix {
        &self.matrices[TEXT_LLM]
    }
}

/// Path of a named matrix inside a feature directory.
pub fn feature_path(dir: impl AsRef<Path>, name: &str) -> PathBuf {
    dir.as_ref().join(format!("{name}.txt"))
}

/// Loads `image.txt`, `text_clip.txt` and `text_llm.txt` from `dir` and
/// aligns their rows to the manifest. Ids not in the manifest are ignored.
pub fn load_features(dir: impl AsRef<Path>, manifest: &[Triplet]) -> Result<FeatureStore> {
    let dir = dir.as_ref();
    let mut matrices = Vec::new();
    for name in REQUIRED_MATRICES {
        let raw = read_matrix(feature_path(dir, name), name)?;
        let index = raw.index();
        let mut data = Vec::with_capacity(manifest.len() * raw.dim());
        for t in manifest {
            let row = index.get(t.id.as_str()).ok_or_else(|| Error::MissingFeature {
                id: t.id.clone(),
                matrix: name.to_string(),
            })?;
            data.extend_from_slice(raw.values.row(*row));
        }
        matrices.push((
            name.to_string(),
            Matrix::from_vec(manifest.len(), raw.dim(), data),
        ));
    }
    FeatureStore::from_matrices(manifest, matrices)
}

pub fn write_features(dir: impl AsRef<Path>, store: &FeatureStore) -> Result<()> {
    for name in store.names() {
        let m = IdMatrix {
            ids: store.ids.clone(),
            values: store.matrices[name].clone(),
        };
        write_matrix(feature_path(dir.as_ref(), name), &m)?;
    }
    Ok(())
}

/// Cached indicator values for one sample. Any field may be absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpt: Option<f64>,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        let check = |what: &str, v: Option<f64>, lo: f64, hi: f64| match v {
            Some(x) if !(lo..=hi).contains(&x) => Err(Error::ScoreOutOfRange {
                what: what.into(),
                value: x,
                lo,
                hi,
            }),
            _ => Ok(()),
        };
        check("gpt", self.gpt, 0.0, 100.0)?;
        check("clip", self.clip, -1.0, 1.0)?;
        check("reward", self.reward, f64::MIN, f64::MAX)
    }

    pub fn is_complete(&self) -> bool {
        self.clip.is_some() && self.length.is_some() && self.reward.is_some() && self.gpt.is_some()
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    id: String,
    #[serde(flatten)]
    record: ScoreRecord,
}

/// Per-id indicator cache, ordered by id.
pub type ScoreCache = BTreeMap<String, ScoreRecord>;

pub fn parse_scores(text: &str, source: &Path) -> Result<ScoreCache> {
    let mut cache = ScoreCache::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoreLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: source.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        parsed.record.validate()?;
        if cache.insert(parsed.id.clone(), parsed.record).is_some() {
            return Err(Error::DuplicateId(parsed.id));
        }
    }
    Ok(cache)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreCache> {
    let path = path.as_ref();
    parse_scores(&read_text(path)?, path)
}

pub fn write_scores(cache: &ScoreCache, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = String::new();
    for (id, record) in cache {
        record.validate()?;
        let line = ScoreLine {
            id: id.clone(),
            record: *record,
        };
        buf.push_str(&serde_json::to_string(&line).expect("score line serializes"));
        buf.push('\n');
    }
    write_atomic(path.as_ref(), buf.as_bytes())
}
