//! Per-sample embedding: four standardised indicator scores followed by the
//! PCA-reduced image‖text features.
//!
//! Slot layout is fixed: `0 = clip, 1 = length, 2 = reward, 3 = gpt,
//! 4.. = reduced features`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, FeatureStore, IdMatrix, ScoreCache, ScoreRecord, Triplet};
use crate::error::{Error, Result};
use crate::indicators::IndicatorScores;
use crate::numerics::{pca_fit, Matrix, PcaModel};

/// Number of indicator slots at the front of every embedding.
pub const SCORE_SLOTS: usize = 4;

/// Per-indicator mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; SCORE_SLOTS],
    pub std: [f64; SCORE_SLOTS],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; SCORE_SLOTS],
            std: [1.0; SCORE_SLOTS],
        }
    }

    /// Constant columns (std 0) map to 0.
    pub fn standardize(&self, s: &IndicatorScores) -> [f64; SCORE_SLOTS] {
        let raw = s.to_array();
        std::array::from_fn(|i| {
            if self.std[i] > 0.0 {
                (raw[i] - self.mean[i]) / self.std[i]
            } else {
                0.0
            }
        })
    }

    pub fn destandardize(&self, z: &[f64; SCORE_SLOTS]) -> [f64; SCORE_SLOTS] {
        std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i])
    }
}

/// Column statistics via Welford's online update.
pub fn fit_standardizer(scores: &[IndicatorScores]) -> Standardizer {
    let mut mean = [0.0; SCORE_SLOTS];
    let mut m2 = [0.0; SCORE_SLOTS];
    for (n, s) in scores.iter().enumerate() {
        let count = (n + 1) as f64;
        for (i, x) in s.to_array().into_iter().enumerate() {
            let delta = x - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (x - mean[i]);
        }
    }
    let n = scores.len().max(1) as f64;
    Standardizer {
        mean,
        std: m2.map(|v| (v / n).max(0.0).sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReducerMode {
    /// One PCA over the concatenation `[image ‖ text_llm]`.
    #[default]
    Joint,
    /// Independent PCAs: `⌈m/2⌉` image components then `⌊m/2⌋` text ones.
    Separate,
}

impl std::str::FromStr for ReducerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(ReducerMode::Joint),
            "separate" => Ok(ReducerMode::Separate),
            _ => Err(Error::BadConfig(format!("unknown reducer mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for ReducerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReducerMode::Joint => "joint",
            ReducerMode::Separate => "separate",
        })
    }
}

/// Dimensionality reduction of the multimodal features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FeatureReducer {
    Joint { pca: PcaModel },
    Separate { image: PcaModel, text: PcaModel },
}

impl FeatureReducer {
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureReducer::Joint { pca } => pca.output_dim(),
            FeatureReducer::Separate { image, text } => image.output_dim() + text.output_dim(),
        }
    }

    pub fn reduce(&self, image_vec: &[f64], text_vec: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureReducer::Joint { pca } => {
                let mut joined = Vec::with_capacity(image_vec.len() + text_vec.len());
                joined.extend_from_slice(image_vec);
                joined.extend_from_slice(text_vec);
                pca.transform_row(&joined)
            }
            FeatureReducer::Separate { image, text } => {
                let mut out = image.transform_row(image_vec)?;
                out.extend(text.transform_row(text_vec)?);
                Ok(out)
            }
        }
    }
}

/// Fits the reducer on every row of the store.
pub fn fit_feature_reducer(features: &FeatureStore, m: usize, mode: ReducerMode) -> Result<FeatureReducer> {
    match mode {
        ReducerMode::Joint => {
            let joined = features.image().hstack(features.text_llm())?;
            Ok(FeatureReducer::Joint {
                pca: pca_fit(&joined, m)?,
            })
        }
        ReducerMode::Separate => {
            if m < 2 {
                return Err(Error::BadRank { rank: m, max: 0 });
            }
            Ok(FeatureReducer::Separate {
                image: pca_fit(features.image(), m.div_ceil(2))?,
                text: pca_fit(features.text_llm(), m / 2)?,
            })
        }
    }
}

/// One sample's embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbedding {
    pub id: String,
    pub values: Vec<f64>,
}

impl ItemEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Everything needed to embed new samples the same way as the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    /// `None` keeps raw indicator values.
    pub standardizer: Option<Standardizer>,
    pub reducer: FeatureReducer,
    #[serde(default)]
    pub fingerprint: String,
}

pub const BUNDLE_FILE: &str = "embedding.json";

impl EmbeddingBundle {
    pub fn dim(&self) -> usize {
        SCORE_SLOTS + self.reducer.output_dim()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("bundle serializes");
        write_atomic(&dir.as_ref().join(BUNDLE_FILE), json.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ModelLoadError(format!("{}: {e}", path.display())))
    }
}

/// `[standardize(scores) ‖ reduce(image, text)]`.
pub fn assemble(
    standardizer: Option<&Standardizer>,
    reducer: &FeatureReducer,
    scores: &ScoreRecord,
    image_vec: &[f64],
    llm_text_vec: &[f64],
    id: &str,
) -> Result<ItemEmbedding> {
    let scores = IndicatorScores::from_record(id, scores)?;
    let head = match standardizer {
        Some(s) => s.standardize(&scores),
        None => scores.to_array(),
    };
    let mut values = Vec::with_capacity(SCORE_SLOTS + reducer.output_dim());
    values.extend_from_slice(&head);
    values.extend(reducer.reduce(image_vec, llm_text_vec)?);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature {
            id: id.to_string(),
            matrix: "embedding".into(),
        });
    }
    Ok(ItemEmbedding {
        id: id.to_string(),
        values,
    })
}

/// Complete indicator scores for the manifest, in manifest order.
pub fn collect_scores(manifest: &[Triplet], cache: &ScoreCache) -> Result<Vec<IndicatorScores>> {
    manifest
        .iter()
        .map(|t| {
            let rec = cache.get(&t.id).copied().unwrap_or_default();
            IndicatorScores::from_record(&t.id, &rec)
        })
        .collect()
}

/// Options for [`fit_embedding`].
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingOptions {
    pub feature_size: usize,
    pub standardize: bool,
    pub mode: ReducerMode,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            feature_size: 6,
            standardize: true,
            mode: ReducerMode::Joint,
        }
    }
}

/// Fits standardizer and reducer on the whole dataset.
pub fn fit_embedding(
    manifest: &[Triplet],
    cache: &ScoreCache,
    features: &FeatureStore,
    opts: EmbeddingOptions,
) -> Result<EmbeddingBundle> {
    let scores = collect_scores(manifest, cache)?;
    Ok(EmbeddingBundle {
        standardizer: opts.standardize.then(|| fit_standardizer(&scores)),
        reducer: fit_feature_reducer(features, opts.feature_size, opts.mode)?,
        fingerprint: String::new(),
    })
}

/// One embedding per triplet, in manifest order.
pub fn assemble_corpus(
    manifest: &[Triplet],
    cache: &ScoreCache,
    features: &FeatureStore,
    bundle: &EmbeddingBundle,
) -> Result<Vec<ItemEmbedding>> {
    let image = features.image();
    let text = features.text_llm();
    manifest
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let rec = cache.get(&t.id).copied().unwrap_or_default();
            assemble(
                bundle.standardizer.as_ref(),
                &bundle.reducer,
                &rec,
                image.row(i),
                text.row(i),
                &t.id,
            )
        })
        .collect()
}

pub fn to_id_matrix(embeddings: &[ItemEmbedding]) -> Result<IdMatrix> {
    let rows: Vec<&[f64]> = embeddings.iter().map(|e| e.values.as_slice()).collect();
    let values = if rows.is_empty() {
        Matrix::zeros(0, 0)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok(IdMatrix {
        ids: embeddings.iter().map(|e| e.id.clone()).collect(),
        values,
    })
}

pub fn from_id_matrix(m: &IdMatrix) -> Vec<ItemEmbedding> {
    m.ids
        .iter()
        .zip(m.values.iter_rows())
        .map(|(id, r)| ItemEmbedding {
            id: id.clone(),
            values: r.to_vec(),
        })
        .collect()
}
