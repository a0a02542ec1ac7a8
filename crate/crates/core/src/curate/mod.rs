//! Cluster-stratified top-k curation and the pairwise judgment aggregator.

mod report;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{oracle_comparison, write_report, OracleComparison, ReportSummary, RANDOM_BASELINES};

use crate::corpus::{FeatureStore, ScoreCache, Triplet};
use crate::embedding::ItemEmbedding;
use crate::error::{Error, Result};
use crate::indicators::{Indicator, IndicatorScores};
use crate::numerics::spectral_cluster;
use crate::selector::SelectorModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurationConfig {
    pub clusters: usize,
    pub alpha: usize,
    pub seed: u64,
    pub clustering_enabled: bool,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            clusters: 10,
            alpha: 200,
            seed: 0,
            clustering_enabled: true,
        }
    }
}

/// Where per-item scores come from.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Selector(&'a SelectorModel),
    /// One raw indicator column instead of the learned selector.
    Indicator(Indicator, &'a ScoreCache),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Manifest ids in canonical order.
    pub ids: Vec<String>,
    /// Cluster of each id.
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
    pub quotas: Vec<usize>,
    /// Per-cluster picks, best first.
    pub per_cluster: Vec<Vec<String>>,
    /// The union, in canonical order.
    pub selected: Vec<String>,
}

impl SelectionResult {
    pub fn alpha(&self) -> usize {
        self.selected.len()
    }
}

/// Largest-remainder apportionment of `alpha` proportional to `sizes`.
///
/// Integer arithmetic throughout: the floor of `α·s_i/N` is `α·s_i div N`
/// and its fractional part is ordered by `α·s_i mod N`, ties going to the
/// lower index. The `quota_i ≤ s_i` cap never binds once `α ≤ N`:
/// `⌊α s_i/N⌋ ≤ s_i`, and a bonus unit only goes to a nonzero remainder,
/// where `α s_i/N < s_i` strictly.
pub fn allocate(sizes: &[usize], alpha: usize) -> Result<Vec<usize>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::BadConfig("cluster sizes must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    if alpha > total {
        return Err(Error::InfeasibleAlpha { alpha, total });
    }
    let (a, n) = (alpha as u128, total as u128);
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| (a * s as u128 / n) as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = a * sizes[i] as u128 % n;
        let rj = a * sizes[j] as u128 % n;
        rj.cmp(&ri).then(i.cmp(&j))
    });
    let short = alpha - quotas.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quotas[i] += 1;
    }
    debug_assert!(quotas.iter().zip(sizes).all(|(q, s)| q <= s));
    Ok(quotas)
}

/// Positions of the `k` best scores: descending score, ties to the earlier
/// position.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::QuotaExceedsCluster { k, len: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| rank_order(scores[i], i, scores[j], j));
    order.truncate(k);
    Ok(order)
}

fn rank_order(si: f64, i: usize, sj: f64, j: usize) -> Ordering {
    sj.total_cmp(&si).then(i.cmp(&j))
}

/// The `k` best ids of a list given in canonical order.
pub fn select_topk<S: AsRef<str>>(scored: &[(S, f64)], k: usize) -> Result<Vec<String>> {
    let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
    Ok(topk_indices(&scores, k)?
        .into_iter()
        .map(|i| scored[i].0.as_ref().to_string())
        .collect())
}

/// Per-item scores in manifest order. Selector scores are length-1
/// predictions, computed in parallel.
pub fn item_scores(manifest: &[Triplet], embeddings: &[ItemEmbedding], scorer: Scorer<'_>) -> Result<Vec<f64>> {
    match scorer {
        Scorer::Indicator(ind, cache) => manifest
            .iter()
            .map(|t| {
                let rec = cache.get(&t.id).copied().unwrap_or_default();
                Ok(IndicatorScores::from_record(&t.id, &rec)?.get(ind))
            })
            .collect(),
        Scorer::Selector(model) => {
            check_alignment(manifest, embeddings)?;
            let predict = |part: &[ItemEmbedding]| {
                part.iter()
                    .map(|e| model.predict(std::slice::from_ref(&e.values)))
                    .collect::<Result<Vec<f64>>>()
            };
            // No threads where the platform reports no parallelism (wasm).
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
            if workers == 1 {
                return predict(embeddings);
            }
            let chunk = embeddings.len().div_ceil(workers).max(1);
            std::thread::scope(|scope| {
                let handles: Vec<_> = embeddings
                    .chunks(chunk)
                    .map(|part| {
                        scope.spawn(move || predict(part))
                    })
                    .collect();
                let mut out = Vec::with_capacity(embeddings.len());
                for h in handles {
                    out.extend(h.join().map_err(|_| Error::Internal("scoring worker panicked".into()))??);
                }
                Ok(out)
            })
        }
    }
}

fn check_alignment(manifest: &[Triplet], embeddings: &[ItemEmbedding]) -> Result<()> {
    if manifest.len() != embeddings.len() {
        return Err(Error::dims(manifest.len(), embeddings.len(), "embeddings vs manifest"));
    }
    if let Some(t) = manifest.iter().zip(embeddings).find(|(t, e)| t.id != e.id).map(|(t, _)| t) {
        return Err(Error::MissingFeature {
            id: t.id.clone(),
            matrix: "embedding".into(),
        });
    }
    Ok(())
}

/// Cluster labels for curation: spectral clustering of the raw image
/// features, or a single cluster.
pub fn curation_clusters(features: &FeatureStore, cfg: &CurationConfig) -> Result<Vec<usize>> {
    let n = features.ids().len();
    if !cfg.clustering_enabled || cfg.clusters == 1 {
        return Ok(vec![0; n]);
    }
    let assignment = spectral_cluster(features.image(), cfg.clusters, cfg.seed)?;
    assignment
        .labels
        .iter()
        .map(|l| l.ok_or_else(|| Error::Internal("spectral clustering left a row unassigned".into())))
        .collect()
}

/// Allocation, per-cluster top-k and union, given labels and scores.
pub fn select_stratified(ids: &[String], labels: &[usize], scores: &[f64], alpha: usize) -> Result<SelectionResult> {
    let n = ids.len();
    if labels.len() != n || scores.len() != n {
        return Err(Error::dims(n, labels.len().min(scores.len()), "labels/scores vs ids"));
    }
    if alpha == 0 {
        return Err(Error::BadConfig("alpha must be >= 1".into()));
    }
    if alpha > n {
        return Err(Error::InfeasibleAlpha { alpha, total: n });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::Internal(format!("cluster {empty} is empty")));
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = allocate(&sizes, alpha)?;
    let mut chosen = vec![false; n];
    let mut per_cluster = Vec::with_capacity(k);
    for (rows, &q) in members.iter().zip(&quotas) {
        let local: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let picks = topk_indices(&local, q)?;
        per_cluster.push(
            picks
                .iter()
                .map(|&p| {
                    chosen[rows[p]] = true;
                    ids[rows[p]].clone()
                })
                .collect(),
        );
    }
    let selected = (0..n).filter(|&i| chosen[i]).map(|i| ids[i].clone()).collect();
    Ok(SelectionResult {
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        scores: scores.to_vec(),
        cluster_sizes: sizes,
        quotas,
        per_cluster,
        selected,
    })
}

/// Cluster, score, allocate, select.
pub fn curate(
    manifest: &[Triplet],
    features: &FeatureStore,
    embeddings: &[ItemEmbedding],
    scorer: Scorer<'_>,
    cfg: &CurationConfig,
) -> Result<SelectionResult> {
    if cfg.clusters == 0 {
        return Err(Error::BadConfig("need at least one cluster".into()));
    }
    if features.ids().len() != manifest.len() {
        return Err(Error::dims(manifest.len(), features.ids().len(), "features vs manifest"));
    }
    if cfg.alpha > manifest.len() {
        return Err(Error::InfeasibleAlpha {
            alpha: cfg.alpha,
            total: manifest.len(),
        });
    }
    let labels = curation_clusters(features, cfg)?;
    let scores = item_scores(manifest, embeddings, scorer)?;
    let ids: Vec<String> = manifest.iter().map(|t| t.id.clone()).collect();
    select_stratified(&ids, &labels, &scores, cfg.alpha)
}

/// One order-swapped pairwise judgment, from the candidate's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Judgment {
    Win,
    Tie,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Win,
    Tie,
    Fail,
}

impl Judgment {
    pub const ALL: [Judgment; 3] = [Judgment::Win, Judgment::Tie, Judgment::Loss];

    fn points(self) -> i8 {
        match self {
            Judgment::Win => 1,
            Judgment::Tie => 0,
            Judgment::Loss => -1,
        }
    }
}

impl FromStr for Judgment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "win" => Ok(Judgment::Win),
            "tie" => Ok(Judgment::Tie),
            "loss" => Ok(Judgment::Loss),
            _ => Err(Error::BadConfig(format!("unknown judgment {s:?}"))),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Win => "win",
            Outcome::Tie => "tie",
            Outcome::Fail => "fail",
        })
    }
}

/// Two wins, or a win and a tie, is a win; a win and a loss, or two ties,
/// is a tie; anything with a loss and no win is a fail.
pub fn aggregate_judgments(first: Judgment, second: Judgment) -> Outcome {
    match (first.points() + second.points()).signum() {
        1 => Outcome::Win,
        0 => Outcome::Tie,
        _ => Outcome::Fail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(&[3439], 200).unwrap(), vec![200]);
        assert_eq!(allocate(&[1720, 1719], 200).unwrap(), vec![100, 100]);
        assert_eq!(allocate(&[344, 3095], 200).unwrap(), vec![20, 180]);
        assert_eq!(allocate(&[1, 1, 1], 2).unwrap(), vec![1, 1, 0]);
        assert!(matches!(allocate(&[3, 4], 8), Err(Error::InfeasibleAlpha { alpha: 8, total: 7 })));
        assert!(allocate(&[3, 0], 1).is_err());
    }

    #[test]
    fn topk_examples() {
        let scored = [("a", 0.9), ("b", 0.1), ("c", 0.5)];
        assert_eq!(select_topk(&scored, 2).unwrap(), vec!["a", "c"]);
        let flat = [("x", 1.0), ("y", 1.0), ("z", 1.0)];
        assert_eq!(select_topk(&flat, 1).unwrap(), vec!["x"]);
        assert!(matches!(
            select_topk(&flat, 4),
            Err(Error::QuotaExceedsCluster { k: 4, len: 3 })
        ));
    }

    #[test]
    fn constant_scores_take_canonical_prefix() {
        let ids: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
        let r = select_stratified(&ids, &[0; 5], &[0.0; 5], 3).unwrap();
        assert_eq!(r.selected, vec!["t0", "t1", "t2"]);
        assert_eq!(r.quotas, vec![3]);
    }

    #[test]
    fn stratified_picks_respect_clusters() {
        let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let labels = [0, 1, 0, 1, 0, 1];
        let scores = [5.0, 1.0, 4.0, 2.0, 3.0, 9.0];
        let r = select_stratified(&ids, &labels, &scores, 4).unwrap();
        assert_eq!(r.quotas, vec![2, 2]);
        assert_eq!(r.per_cluster, vec![vec!["t0", "t2"], vec!["t5", "t3"]]);
        assert_eq!(r.selected, vec!["t0", "t2", "t3", "t5"]);
    }

    #[test]
    fn judgment_rules() {
        use Judgment::*;
        assert_eq!(aggregate_judgments(Win, Win), Outcome::Win);
        assert_eq!(aggregate_judgments(Win, Tie), Outcome::Win);
        assert_eq!(aggregate_judgments(Win, Loss), Outcome::Tie);
        assert_eq!(aggregate_judgments(Tie, Tie), Outcome::Tie);
        assert_eq!(aggregate_judgments(Tie, Loss), Outcome::Fail);
        assert_eq!(aggregate_judgments(Loss, Loss), Outcome::Fail);
    }
}
