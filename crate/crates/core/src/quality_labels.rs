//! Equal-size training subsets and their genuine quality labels.
//!
//! The corpus is split into `n` equal subsets by balanced k-means++. Each
//! subset is fine-tuned and evaluated outside this crate; the resulting
//! benchmark scores come back as eval reports and their unweighted mean
//! becomes the subset's label.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, write_manifest, Triplet};
use crate::embedding::ItemEmbedding;
use crate::error::{Error, Result};
use crate::numerics::{KMeans, Matrix};

/// One training subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRecord {
    pub subset_id: usize,
    /// Members in canonical (manifest) order.
    pub member_ids: Vec<String>,
    pub embeddings: Vec<ItemEmbedding>,
    pub label: Option<f64>,
}

/// Benchmark scores of the model fine-tuned on one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset_id: usize,
    pub scores: BTreeMap<String, f64>,
}

/// Splits the rows of `space` (manifest order, aligned with `embeddings`)
/// into `n` subsets of `⌊N/n⌋` members each. Leftover rows are dropped.
pub fn build_subsets(
    space: &Matrix,
    embeddings: &[ItemEmbedding],
    n: usize,
    seed: u64,
) -> Result<Vec<SubsetRecord>> {
    let total = space.rows();
    if embeddings.len() != total {
        return Err(Error::dims(total, embeddings.len(), "embeddings vs clustering rows"));
    }
    if n == 0 {
        return Err(Error::BadConfig("need at least one subset".into()));
    }
    if n > total {
        return Err(Error::TooManyClusters { k: n, n: total });
    }
    build_subsets_with_capacity(space, embeddings, n, total / n, seed)
}

/// [`build_subsets`] with an explicit subset size; `n · capacity` may not
/// exceed the row count.
pub fn build_subsets_with_capacity(
    space: &Matrix,
    embeddings: &[ItemEmbedding],
    n: usize,
    capacity: usize,
    seed: u64,
) -> Result<Vec<SubsetRecord>> {
    let total = space.rows();
    if embeddings.len() != total {
        return Err(Error::dims(total, embeddings.len(), "embeddings vs clustering rows"));
    }
    if n > total {
        return Err(Error::TooManyClusters { k: n, n: total });
    }
    if capacity == 0 {
        return Err(Error::BadConfig("subset capacity must be >= 1".into()));
    }
    let assignment = KMeans::new(n, seed).balanced(capacity).fit(space)?;
    Ok(assignment
        .members()
        .into_iter()
        .enumerate()
        .map(|(subset_id, rows)| SubsetRecord {
            subset_id,
            member_ids: rows.iter().map(|&i| embeddings[i].id.clone()).collect(),
            embeddings: rows.iter().map(|&i| embeddings[i].clone()).collect(),
            label: None,
        })
        .collect())
}

/// Unweighted mean of the benchmark scores.
pub fn average_label(report: &EvalReport) -> Result<f64> {
    if report.scores.is_empty() {
        return Err(Error::EmptyReport(report.subset_id));
    }
    let sum: f64 = report.scores.values().sum();
    Ok(sum / report.scores.len() as f64)
}

/// Labels every subset from exactly one report each.
pub fn attach_labels(mut subsets: Vec<SubsetRecord>, reports: &[EvalReport]) -> Result<Vec<SubsetRecord>> {
    let known: HashMap<usize, usize> = subsets
        .iter()
        .enumerate()
        .map(|(pos, s)| (s.subset_id, pos))
        .collect();
    let mut labels: Vec<Option<f64>> = vec![None; subsets.len()];
    for r in reports {
        let pos = *known.get(&r.subset_id).ok_or(Error::UnknownSubset(r.subset_id))?;
        if labels[pos].is_some() {
            return Err(Error::DuplicateReport(r.subset_id));
        }
        labels[pos] = Some(average_label(r)?);
    }
    for (s, label) in subsets.iter_mut().zip(labels) {
        s.label = Some(label.ok_or(Error::MissingLabel(s.subset_id))?);
    }
    Ok(subsets)
}

pub fn parse_eval_reports(text: &str, source: &Path) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalReport = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: source.to_path_buf(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if let Some((name, v)) = r.scores.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::MalformedRecord {
                path: source.to_path_buf(),
                line: idx + 1,
                reason: format!("non-finite score {v} for {name}"),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_eval_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_eval_reports(&text, path)
}

pub fn write_eval_reports(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let mut buf = String::new();
    for r in reports {
        buf.push_str(&serde_json::to_string(r).expect("report serializes"));
        buf.push('\n');
    }
    write_atomic(path.as_ref(), buf.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct MembershipLine {
    subset_id: usize,
    member_ids: Vec<String>,
}

pub const MEMBERSHIP_FILE: &str = "subsets.jsonl";

/// Writes `subsets.jsonl` plus one `subset_<k>.manifest` per subset for the
/// external fine-tuning step.
pub fn write_subsets(dir: impl AsRef<Path>, subsets: &[SubsetRecord], manifest: &[Triplet]) -> Result<()> {
    let dir = dir.as_ref();
    let by_id: HashMap<&str, &Triplet> = manifest.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut buf = String::new();
    for s in subsets {
        let line = MembershipLine {
            subset_id: s.subset_id,
            member_ids: s.member_ids.clone(),
        };
        buf.push_str(&serde_json::to_string(&line).expect("membership serializes"));
        buf.push('\n');
        let members: Vec<Triplet> = s
            .member_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|t| (*t).clone())
                    .ok_or_else(|| Error::Internal(format!("subset member {id:?} not in manifest")))
            })
            .collect::<Result<_>>()?;
        write_manifest(dir.join(format!("subset_{}.manifest", s.subset_id)), &members)?;
    }
    write_atomic(&dir.join(MEMBERSHIP_FILE), buf.as_bytes())
}

/// Reads `subsets.jsonl` and re-attaches embeddings by id.
pub fn read_subsets(dir: impl AsRef<Path>, embeddings: &[ItemEmbedding]) -> Result<Vec<SubsetRecord>> {
    let path = dir.as_ref().join(MEMBERSHIP_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let by_id: HashMap<&str, &ItemEmbedding> = embeddings.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: MembershipLine = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.clone(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let embeddings = m
            .member_ids
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).map(|e| (*e).clone()).ok_or_else(|| Error::MissingFeature {
                    id: id.clone(),
                    matrix: "embedding".into(),
                })
            })
            .collect::<Result<_>>()?;
        out.push(SubsetRecord {
            subset_id: m.subset_id,
            member_ids: m.member_ids,
            embeddings,
            label: None,
        });
    }
    Ok(out)
}
