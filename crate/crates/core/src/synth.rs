//! Seeded synthetic corpus with a planted per-item quality `q`.
//!
//! Images fall into topic clusters. `q ~ N(topic offset, 1)` then drives
//! every observable signal: how well the caption vector aligns with its
//! image (CLIP score), response length, reward and GPT rating, plus one
//! direction in the response-text features. `q` itself is written to an
//! oracle file that only tests and reports read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{
    write_atomic, write_features, write_manifest, write_scores, FeatureStore, ScoreCache, ScoreRecord, Triplet, IMAGE,
    TEXT_CLIP, TEXT_LLM,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::quality_labels::{EvalReport, SubsetRecord};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURES_DIR: &str = "features";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const ORACLE_FILE: &str = "oracle.tsv";
pub const INSTRUCTION: &str = "Describe this image in detail.";

/// The range the oracle-vs-CLIP-score Spearman correlation is tuned into.
pub const CLIP_SPEARMAN_BAND: (f64, f64) = (0.3, 0.8);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub topics: usize,
    pub image_dim: usize,
    pub text_dim: usize,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            topics: 10,
            image_dim: 32,
            text_dim: 48,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: Vec<Triplet>,
    pub features: FeatureStore,
    /// Reward and GPT scores only; CLIP and length are computed locally.
    pub scores: ScoreCache,
    pub oracle: BTreeMap<String, f64>,
}

const WORDS: [&str; 40] = [
    "the", "a", "image", "shows", "bright", "small", "large", "red", "blue", "green", "person", "dog", "street", "table",
    "window", "tree", "car", "sky", "water", "building", "standing", "sitting", "near", "behind", "on", "with", "and",
    "in", "front", "of", "wooden", "old", "young", "group", "light", "shadow", "corner", "open", "quiet", "busy",
];

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n < 30 {
        return Err(Error::BadConfig(format!("synthetic corpus needs n >= 30, got {}", cfg.n)));
    }
    if cfg.topics == 0 || cfg.image_dim < 2 || cfg.text_dim < 2 {
        return Err(Error::BadConfig("synthetic corpus needs topics >= 1 and dims >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (di, dt) = (cfg.image_dim, cfg.text_dim);
    let centers: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| (0..di).map(|_| 3.0 * gauss(&mut rng)).collect())
        .collect();
    let text_centers: Vec<Vec<f64>> = (0..cfg.topics)
        .map(|_| (0..dt).map(|_| 2.0 * gauss(&mut rng)).collect())
        .collect();
    let topic_offset: Vec<f64> = (0..cfg.topics).map(|_| 0.4 * gauss(&mut rng)).collect();
    let quality_dir = unit(&(0..dt).map(|_| gauss(&mut rng)).collect::<Vec<_>>());

    let mut manifest = Vec::with_capacity(cfg.n);
    let mut image = Vec::with_capacity(cfg.n * di);
    let mut text_clip = Vec::with_capacity(cfg.n * di);
    let mut text_llm = Vec::with_capacity(cfg.n * dt);
    let mut scores = ScoreCache::new();
    let mut oracle = BTreeMap::new();
    for i in 0..cfg.n {
        let id = format!("syn-{i:05}");
        let topic = rng.gen_range(0..cfg.topics);
        let q = topic_offset[topic] + gauss(&mut rng);

        let img: Vec<f64> = centers[topic].iter().map(|c| c + gauss(&mut rng)).collect();
        // caption vector: aligned with the image in proportion to quality
        let align = 1.0 / (1.0 + (-(q + 0.8 * gauss(&mut rng))).exp());
        let dir = unit(&img);
        let noise = unit(&(0..di).map(|_| gauss(&mut rng)).collect::<Vec<_>>());
        text_clip.extend(dir.iter().zip(&noise).map(|(d, e)| align * d + (1.0 - align) * e));
        image.extend(img);

        text_llm.extend(
            text_centers[topic]
                .iter()
                .zip(&quality_dir)
                .map(|(c, u)| c + 1.5 * q * u + gauss(&mut rng)),
        );

        let words = (40.0 + 15.0 * q + 5.0 * gauss(&mut rng)).round().max(3.0) as usize;
        let mut response = String::new();
        for w in 0..words {
            if w > 0 {
                response.push(' ');
            }
            response.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
        }
        let reward = 1.5 * q + 0.5 * gauss(&mut rng);
        let gpt = (60.0 + 12.0 * q + 4.0 * gauss(&mut rng)).round().clamp(0.0, 100.0);

        manifest.push(Triplet {
            id: id.clone(),
            image_ref: format!("images/{id}.jpg"),
            instruction: INSTRUCTION.to_string(),
            response,
        });
        scores.insert(
            id.clone(),
            ScoreRecord {
                reward: Some(reward),
                gpt: Some(gpt),
                ..ScoreRecord::default()
            },
        );
        oracle.insert(id, q);
    }
    let features = FeatureStore::from_matrices(
        &manifest,
        [
            (IMAGE.to_string(), Matrix::from_vec(cfg.n, di, image)),
            (TEXT_CLIP.to_string(), Matrix::from_vec(cfg.n, di, text_clip)),
            (TEXT_LLM.to_string(), Matrix::from_vec(cfg.n, dt, text_llm)),
        ],
    )?;
    Ok(SynthCorpus {
        manifest,
        features,
        scores,
        oracle,
    })
}

/// Writes `manifest.jsonl`, `features/`, `scores.jsonl` and `oracle.tsv`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<()> {
    let dir = dir.as_ref();
    write_manifest(dir.join(MANIFEST_FILE), &corpus.manifest)?;
    write_features(dir.join(FEATURES_DIR), &corpus.features)?;
    write_scores(&corpus.scores, dir.join(SCORES_FILE))?;
    write_oracle(dir.join(ORACLE_FILE), &corpus.oracle)
}

pub fn write_oracle(path: impl AsRef<Path>, oracle: &BTreeMap<String, f64>) -> Result<()> {
    let mut out = String::new();
    for (id, q) in oracle {
        let _ = writeln!(out, "{id}\t{q}");
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Reads `id<TAB>q` lines.
pub fn read_oracle(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            reason: reason.to_string(),
        };
        let (id, q) = line.split_once('\t').ok_or_else(|| malformed("expected id<TAB>value"))?;
        let q: f64 = q.trim().parse().map_err(|_| malformed("bad quality value"))?;
        if !q.is_finite() {
            return Err(malformed("non-finite quality value"));
        }
        if out.insert(id.to_string(), q).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

/// Stand-in eval reports: each subset's label is the mean planted quality of
/// its members, reported as a single `oracle` benchmark.
pub fn oracle_reports(subsets: &[SubsetRecord], oracle: &BTreeMap<String, f64>) -> Result<Vec<EvalReport>> {
    subsets
        .iter()
        .map(|s| {
            let qs: Vec<f64> = s
                .member_ids
                .iter()
                .map(|id| {
                    oracle.get(id).copied().ok_or_else(|| Error::MissingScore {
                        id: id.clone(),
                        indicator: "oracle".into(),
                    })
                })
                .collect::<Result<_>>()?;
            let mean = qs.iter().sum::<f64>() / qs.len().max(1) as f64;
            Ok(EvalReport {
                subset_id: s.subset_id,
                scores: [("oracle".to_string(), mean)].into(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::{clip_score, length_score};
    use crate::numerics::spearman;

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(a.path(), &generate(&SynthConfig::new(100, 1)).unwrap()).unwrap();
        write_corpus(b.path(), &generate(&SynthConfig::new(100, 1)).unwrap()).unwrap();
        for f in [
            MANIFEST_FILE.to_string(),
            SCORES_FILE.to_string(),
            ORACLE_FILE.to_string(),
            format!("{FEATURES_DIR}/image.txt"),
            format!("{FEATURES_DIR}/text_clip.txt"),
            format!("{FEATURES_DIR}/text_llm.txt"),
        ] {
            assert_eq!(
                fs::read(a.path().join(&f)).unwrap(),
                fs::read(b.path().join(&f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn clip_correlation_in_band() {
        let c = generate(&SynthConfig::new(1000, 3)).unwrap();
        let q: Vec<f64> = c.manifest.iter().map(|t| c.oracle[&t.id]).collect();
        let clip: Vec<f64> = (0..c.manifest.len())
            .map(|i| clip_score(c.features.image().row(i), c.features.text_clip().row(i)).unwrap())
            .collect();
        let rho = spearman(&q, &clip);
        assert!(
            CLIP_SPEARMAN_BAND.0 <= rho && rho <= CLIP_SPEARMAN_BAND.1,
            "clip spearman {rho}"
        );
        let len: Vec<f64> = c.manifest.iter().map(|t| length_score(&t.response) as f64).collect();
        assert!(spearman(&q, &len) > 0.8);
    }

    #[test]
    fn oracle_round_trip_and_small_n() {
        let c = generate(&SynthConfig::new(30, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ORACLE_FILE);
        write_oracle(&p, &c.oracle).unwrap();
        assert_eq!(read_oracle(&p).unwrap(), c.oracle);
        assert!(matches!(generate(&SynthConfig::new(29, 0)), Err(Error::BadConfig(_))));
    }
}
