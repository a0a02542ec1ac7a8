//! Curation artifacts: the selected manifest, quota table, per-item summary,
//! score histograms and an optional comparison against a quality oracle.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SelectionResult;
use crate::corpus::{write_atomic, write_manifest, Triplet};
use crate::error::{Error, Result};

/// Number of random subsets the selection is compared against.
pub const RANDOM_BASELINES: usize = 20;

/// Selected-vs-random mean oracle quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub selected_mean: f64,
    pub random_means: Vec<f64>,
    /// Mean over all random draws.
    pub random_mean: f64,
    /// `sqrt(s_sel²/α + s_rand²/(R·α))` with sample standard deviations of
    /// the selected items and of the pooled random draws.
    pub pooled_se: f64,
    pub uplift: f64,
    /// `uplift / pooled_se`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub alpha: usize,
    pub clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub quotas: Vec<usize>,
    pub mean_selected_score: f64,
    pub mean_score: f64,
    pub oracle: Option<OracleComparison>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn lookup(oracle: &BTreeMap<String, f64>, id: &str) -> Result<f64> {
    oracle.get(id).copied().ok_or_else(|| Error::MissingScore {
        id: id.to_string(),
        indicator: "oracle".into(),
    })
}

/// Compares the selection with `RANDOM_BASELINES` uniform random subsets of
/// the same size, drawn from seeds `seed, seed+1, …`.
pub fn oracle_comparison(result: &SelectionResult, oracle: &BTreeMap<String, f64>, seed: u64) -> Result<OracleComparison> {
    let alpha = result.selected.len();
    if alpha == 0 {
        return Err(Error::BadConfig("empty selection".into()));
    }
    let all: Vec<f64> = result.ids.iter().map(|id| lookup(oracle, id)).collect::<Result<_>>()?;
    let sel: Vec<f64> = result.selected.iter().map(|id| lookup(oracle, id)).collect::<Result<_>>()?;
    let (selected_mean, s_sel) = mean_sd(&sel);
    let mut pooled = Vec::with_capacity(alpha * RANDOM_BASELINES);
    let mut random_means = Vec::with_capacity(RANDOM_BASELINES);
    for r in 0..RANDOM_BASELINES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let draw: Vec<f64> = sample(&mut rng, all.len(), alpha).into_iter().map(|i| all[i]).collect();
        random_means.push(draw.iter().sum::<f64>() / alpha as f64);
        pooled.extend(draw);
    }
    let (random_mean, s_rand) = mean_sd(&pooled);
    let a = alpha as f64;
    let pooled_se = (s_sel * s_sel / a + s_rand * s_rand / (RANDOM_BASELINES as f64 * a)).sqrt();
    let uplift = selected_mean - random_mean;
    Ok(OracleComparison {
        selected_mean,
        random_means,
        random_mean,
        pooled_se,
        uplift,
        z: if pooled_se > 0.0 { uplift / pooled_se } else { f64::INFINITY * uplift.signum() },
    })
}

#[derive(Serialize)]
struct ItemLine<'a> {
    id: &'a str,
    cluster: usize,
    score: f64,
    selected: bool,
}

/// Writes `selected.manifest`, `quotas.tsv`, `summary.jsonl`,
/// `hist_cluster_<i>.svg` and `report.json` into `dir`.
pub fn write_report(
    dir: impl AsRef<Path>,
    result: &SelectionResult,
    manifest: &[Triplet],
    oracle: Option<&BTreeMap<String, f64>>,
    seed: u64,
) -> Result<ReportSummary> {
    let dir = dir.as_ref();
    let by_id: HashMap<&str, &Triplet> = manifest.iter().map(|t| (t.id.as_str(), t)).collect();
    let selected: Vec<Triplet> = result
        .selected
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::Internal(format!("selected id {id:?} not in manifest")))
        })
        .collect::<Result<_>>()?;
    write_manifest(dir.join("selected.manifest"), &selected)?;

    let n = result.ids.len();
    let alpha = result.selected.len();
    let mut table = String::from("cluster\tsize\tquota\tproportional\n");
    for (i, (s, q)) in result.cluster_sizes.iter().zip(&result.quotas).enumerate() {
        let exact = alpha as f64 * *s as f64 / n as f64;
        let _ = writeln!(table, "{i}\t{s}\t{q}\t{exact:.4}");
    }
    write_atomic(&dir.join("quotas.tsv"), table.as_bytes())?;

    let chosen: std::collections::HashSet<&str> = result.selected.iter().map(String::as_str).collect();
    let mut lines = String::new();
    for ((id, &cluster), &score) in result.ids.iter().zip(&result.labels).zip(&result.scores) {
        let line = ItemLine {
            id,
            cluster,
            score,
            selected: chosen.contains(id.as_str()),
        };
        lines.push_str(&serde_json::to_string(&line).expect("item serializes"));
        lines.push('\n');
    }
    write_atomic(&dir.join("summary.jsonl"), lines.as_bytes())?;

    let lo = result.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = result.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for c in 0..result.cluster_sizes.len() {
        let mut all = Vec::new();
        let mut sel = Vec::new();
        for (i, &l) in result.labels.iter().enumerate() {
            if l == c {
                all.push(result.scores[i]);
                if chosen.contains(result.ids[i].as_str()) {
                    sel.push(result.scores[i]);
                }
            }
        }
        let title = format!(
            "cluster {c}: {} items, quota {}",
            result.cluster_sizes[c], result.quotas[c]
        );
        let svg = histogram_svg(&title, &all, &sel, lo, hi);
        write_atomic(&dir.join(format!("hist_cluster_{c}.svg")), svg.as_bytes())?;
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let sel_scores: Vec<f64> = (0..n)
        .filter(|&i| chosen.contains(result.ids[i].as_str()))
        .map(|i| result.scores[i])
        .collect();
    let summary = ReportSummary {
        alpha,
        clusters: result.cluster_sizes.len(),
        cluster_sizes: result.cluster_sizes.clone(),
        quotas: result.quotas.clone(),
        mean_selected_score: mean(&sel_scores),
        mean_score: mean(&result.scores),
        oracle: oracle.map(|o| oracle_comparison(result, o, seed)).transpose()?,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    Ok(summary)
}

const BINS: usize = 20;

/// Bar chart of `all` with the `selected` share drawn on top.
fn histogram_svg(title: &str, all: &[f64], selected: &[f64], lo: f64, hi: f64) -> String {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let bin = |v: f64| (((v - lo) / (hi - lo) * BINS as f64) as usize).min(BINS - 1);
    let mut counts = [0usize; BINS];
    let mut picked = [0usize; BINS];
    all.iter().for_each(|&v| counts[bin(v)] += 1);
    selected.iter().for_each(|&v| picked[bin(v)] += 1);
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (w, h, top, left) = (420.0, 220.0, 30.0, 10.0);
    let plot_h = h - top - 30.0;
    let bar_w = (w - 2.0 * left) / BINS as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"{left}\" y=\"18\">{title}</text>\n"
    );
    for b in 0..BINS {
        let x = left + b as f64 * bar_w;
        let total_h = counts[b] as f64 / peak * plot_h;
        let sel_h = picked[b] as f64 / peak * plot_h;
        let base = top + plot_h;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{total_h:.1}\" fill=\"#bbb\"/>",
            base - total_h,
            bar_w - 1.0
        );
        if picked[b] > 0 {
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{sel_h:.1}\" fill=\"#2a6fdb\"/>",
                base - sel_h,
                bar_w - 1.0
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{left}\" y=\"{:.0}\">{lo:.3}</text>\n<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"end\">{hi:.3}</text>\n</svg>",
        h - 8.0,
        w - left,
        h - 8.0
    );
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curate::select_stratified;

    fn triplets(n: usize) -> Vec<Triplet> {
        (0..n)
            .map(|i| Triplet {
                id: format!("t{i}"),
                image_ref: format!("img/{i}.jpg"),
                instruction: "Describe this image.".into(),
                response: format!("response {i}"),
            })
            .collect()
    }

    #[test]
    fn report_files_and_uplift() {
        let manifest = triplets(40);
        let ids: Vec<String> = manifest.iter().map(|t| t.id.clone()).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let scores: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let result = select_stratified(&ids, &labels, &scores, 10).unwrap();
        let oracle: BTreeMap<String, f64> = ids.iter().zip(&scores).map(|(i, s)| (i.clone(), *s / 10.0)).collect();
        let dir = tempfile::tempdir().unwrap();
        let summary = write_report(dir.path(), &result, &manifest, Some(&oracle), 3).unwrap();

        let text = std::fs::read_to_string(dir.path().join("selected.manifest")).unwrap();
        assert_eq!(text.lines().count(), 10);
        let quotas = std::fs::read_to_string(dir.path().join("quotas.tsv")).unwrap();
        let total: usize = quotas
            .lines()
            .skip(1)
            .map(|l| l.split('\t').nth(2).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 10);
        for c in 0..3 {
            assert!(dir.path().join(format!("hist_cluster_{c}.svg")).exists());
        }

        let cmp = summary.oracle.unwrap();
        let sel_mean = result.selected.iter().map(|id| oracle[id]).sum::<f64>() / 10.0;
        assert!((cmp.selected_mean - sel_mean).abs() < 1e-12);
        let rand_mean = cmp.random_means.iter().sum::<f64>() / RANDOM_BASELINES as f64;
        assert!((cmp.random_mean - rand_mean).abs() < 1e-12);
        assert!((cmp.uplift - (sel_mean - rand_mean)).abs() < 1e-12);
        assert!(cmp.z > 2.0);
    }

    #[test]
    fn missing_oracle_entry() {
        let manifest = triplets(4);
        let ids: Vec<String> = manifest.iter().map(|t| t.id.clone()).collect();
        let result = select_stratified(&ids, &[0; 4], &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let oracle: BTreeMap<String, f64> = [("t0".to_string(), 1.0)].into();
        assert!(matches!(
            oracle_comparison(&result, &oracle, 0),
            Err(Error::MissingScore { .. })
        ));
    }
}
