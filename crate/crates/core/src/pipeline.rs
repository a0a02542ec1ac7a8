//! The pipeline stages behind the CLI subcommands.
//!
//! Each stage hashes its input files and the config keys it depends on.
//! The hash is stored as `<work-dir>/<stage>/fingerprint`; a rerun whose
//! hash matches (and whose outputs still exist) does nothing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, ProviderMode, SubsetSpace};
use crate::corpus::{
    feature_path, load_features, load_manifest, read_matrix, read_scores, write_atomic, write_manifest, write_matrix,
    write_scores, ScoreCache, Triplet, REQUIRED_MATRICES,
};
use crate::curate::{curate, write_report, CurationConfig, Scorer, SelectionResult};
use crate::embedding::{
    assemble_corpus, fit_embedding, from_id_matrix, to_id_matrix, EmbeddingBundle, EmbeddingOptions, BUNDLE_FILE,
};
use crate::error::{Error, Result};
use crate::indicators::{score_corpus, Providers};
use crate::numerics::Matrix;
use crate::quality_labels::{
    attach_labels, build_subsets_with_capacity, read_eval_reports, read_subsets, write_eval_reports, write_subsets,
    MEMBERSHIP_FILE,
};
use crate::selector::{train, Architecture, SelectorModel, TrainConfig};
use crate::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Score,
    Embed,
    Split,
    TrainSelector,
    Curate,
    Report,
    Synth,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Score,
        Command::Embed,
        Command::Split,
        Command::TrainSelector,
        Command::Curate,
        Command::Report,
        Command::Synth,
    ];

    /// Stages of a full run, in order.
    pub const PIPELINE: [Command; 6] = [
        Command::Score,
        Command::Embed,
        Command::Split,
        Command::TrainSelector,
        Command::Curate,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Score => "score",
            Command::Embed => "embed",
            Command::Split => "split",
            Command::TrainSelector => "train-selector",
            Command::Curate => "curate",
            Command::Report => "report",
            Command::Synth => "synth",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Score => "fill the indicator score cache (CLIP, length, reward, GPT)",
            Command::Embed => "fit the standardizer and PCA and embed every sample",
            Command::Split => "split the corpus into equal training subsets",
            Command::TrainSelector => "train the data selector on labelled subsets",
            Command::Curate => "cluster, score and select the curated subset",
            Command::Report => "write the curation report",
            Command::Synth => "generate a synthetic corpus with planted quality",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

const FINGERPRINT_FILE: &str = "fingerprint";
const EMBEDDINGS_FILE: &str = "embeddings.txt";
const SELECTION_FILE: &str = "selection.json";
const SELECTED_MANIFEST: &str = "selected.manifest";

fn fingerprint(stage: &str, cfg: &PipelineConfig, keys: &[&str], inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update(b"\n");
    h.update(cfg.describe(keys)?.as_bytes());
    for p in inputs {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn up_to_date(cfg: &PipelineConfig, dir: &Path, fp: &str, outputs: &[PathBuf]) -> bool {
    !cfg.force
        && fs::read_to_string(dir.join(FINGERPRINT_FILE)).is_ok_and(|s| s.trim() == fp)
        && outputs.iter().all(|p| p.exists())
}

fn mark(dir: &Path, fp: &str) -> Result<()> {
    write_atomic(&dir.join(FINGERPRINT_FILE), format!("{fp}\n").as_bytes())
}

fn feature_files(cfg: &PipelineConfig) -> Vec<PathBuf> {
    REQUIRED_MATRICES.iter().map(|m| feature_path(&cfg.features, m)).collect()
}

fn corpus_inputs(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let mut v = vec![cfg.manifest.clone()];
    v.extend(feature_files(cfg));
    v
}

fn embed_outputs(cfg: &PipelineConfig) -> (PathBuf, PathBuf) {
    let dir = cfg.stage_dir("embed");
    (dir.join(BUNDLE_FILE), dir.join(EMBEDDINGS_FILE))
}

/// Runs one command.
pub fn run(cmd: Command, cfg: &PipelineConfig) -> Result<StageStatus> {
    let start = Instant::now();
    let status = match cmd {
        Command::Score => score_stage(cfg),
        Command::Embed => embed_stage(cfg),
        Command::Split => split_stage(cfg),
        Command::TrainSelector => train_stage(cfg),
        Command::Curate => curate_stage(cfg),
        Command::Report => report_stage(cfg),
        Command::Synth => synth_stage(cfg),
    }?;
    log::info!(
        "stage={} status={} elapsed_ms={}",
        cmd,
        match status {
            StageStatus::Ran => "done",
            StageStatus::UpToDate => "up-to-date",
        },
        start.elapsed().as_millis()
    );
    Ok(status)
}

/// Every stage from scoring to the report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<()> {
    for cmd in Command::PIPELINE {
        run(cmd, cfg)?;
    }
    Ok(())
}

fn load_cache(path: &Path) -> Result<ScoreCache> {
    if path.exists() {
        read_scores(path)
    } else {
        Ok(ScoreCache::new())
    }
}

fn score_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["providers", "retries"];
    let dir = cfg.stage_dir("score");
    let mut inputs = corpus_inputs(cfg);
    inputs.push(cfg.scores.clone());
    if cfg.scores.exists() && up_to_date(cfg, &dir, &fingerprint("score", cfg, KEYS, &inputs)?, &[]) {
        return Ok(StageStatus::UpToDate);
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let features = load_features(&cfg.features, &manifest)?;
    let cache = load_cache(&cfg.scores)?;
    let cache = match cfg.provider {
        ProviderMode::Cache => score_corpus(&manifest, &features, &Providers::CacheOnly, cache)?,
        ProviderMode::Http => http_scores(cfg, &manifest, &features, cache)?,
    };
    write_scores(&cache, &cfg.scores)?;
    mark(&dir, &fingerprint("score", cfg, KEYS, &inputs)?)?;
    Ok(StageStatus::Ran)
}

#[cfg(feature = "http")]
fn http_scores(
    cfg: &PipelineConfig,
    manifest: &[Triplet],
    features: &crate::corpus::FeatureStore,
    cache: ScoreCache,
) -> Result<ScoreCache> {
    use crate::indicators::http::{HttpRatingClient, HttpRewardClient, RATING_URL_ENV, REWARD_URL_ENV};
    use crate::indicators::PromptTemplate;
    let timeout = std::time::Duration::from_secs(cfg.timeout_secs);
    let missing = |var: &str| Error::BadConfig(format!("providers=http needs {var} to be set"));
    let rating = HttpRatingClient::from_env(timeout).ok_or_else(|| missing(RATING_URL_ENV))?;
    let reward = HttpRewardClient::from_env(timeout).ok_or_else(|| missing(REWARD_URL_ENV))?;
    let template = PromptTemplate::default();
    let providers = Providers::Online {
        rating: &rating,
        reward: &reward,
        template: &template,
        retries: cfg.retries,
        workers: cfg.workers.max(1),
    };
    score_corpus(manifest, features, &providers, cache)
}

#[cfg(not(feature = "http"))]
fn http_scores(
    _: &PipelineConfig,
    _: &[Triplet],
    _: &crate::corpus::FeatureStore,
    _: ScoreCache,
) -> Result<ScoreCache> {
    Err(Error::BadConfig("this build has no HTTP support; use providers=cache".into()))
}

fn embed_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["feature-size", "reducer", "no-standardize"];
    let dir = cfg.stage_dir("embed");
    let (bundle_path, emb_path) = embed_outputs(cfg);
    let mut inputs = corpus_inputs(cfg);
    inputs.push(cfg.scores.clone());
    let fp = fingerprint("embed", cfg, KEYS, &inputs)?;
    if up_to_date(cfg, &dir, &fp, &[bundle_path, emb_path.clone()]) {
        return Ok(StageStatus::UpToDate);
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let features = load_features(&cfg.features, &manifest)?;
    let cache = read_scores(&cfg.scores)?;
    let opts = EmbeddingOptions {
        feature_size: cfg.feature_size,
        standardize: cfg.standardize,
        mode: cfg.reducer,
    };
    let mut bundle = fit_embedding(&manifest, &cache, &features, opts)?;
    bundle.fingerprint = fp.clone();
    let embeddings = assemble_corpus(&manifest, &cache, &features, &bundle)?;
    bundle.save(&dir)?;
    write_matrix(&emb_path, &to_id_matrix(&embeddings)?)?;
    mark(&dir, &fp)?;
    Ok(StageStatus::Ran)
}

fn split_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["subsets", "capacity", "subset-space", "seed"];
    let dir = cfg.stage_dir("split");
    let (bundle_path, emb_path) = embed_outputs(cfg);
    let mut inputs = vec![bundle_path, emb_path.clone(), cfg.manifest.clone()];
    if cfg.subset_space == SubsetSpace::Image {
        inputs.push(feature_path(&cfg.features, crate::corpus::IMAGE));
    }
    inputs.extend(cfg.oracle.clone());
    let fp = fingerprint("split", cfg, KEYS, &inputs)?;
    let mut outputs = vec![dir.join(MEMBERSHIP_FILE)];
    if cfg.oracle.is_some() {
        outputs.push(cfg.eval_reports_path());
    }
    if up_to_date(cfg, &dir, &fp, &outputs) {
        return Ok(StageStatus::UpToDate);
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let embeddings = from_id_matrix(&read_matrix(&emb_path, "embedding")?);
    let space = match cfg.subset_space {
        SubsetSpace::Embedding => {
            let rows: Vec<&[f64]> = embeddings.iter().map(|e| e.values.as_slice()).collect();
            Matrix::from_rows(&rows)?
        }
        SubsetSpace::Image => load_features(&cfg.features, &manifest)?.image().clone(),
    };
    if cfg.subsets == 0 {
        return Err(Error::BadConfig("subsets must be >= 1".into()));
    }
    let capacity = cfg.capacity.unwrap_or(space.rows() / cfg.subsets.max(1));
    let subsets = build_subsets_with_capacity(&space, &embeddings, cfg.subsets, capacity, cfg.seed)?;
    let kept: usize = subsets.iter().map(|s| s.member_ids.len()).sum();
    log::info!(
        "split: {} subsets x {capacity}, {} samples left out",
        subsets.len(),
        space.rows() - kept
    );
    write_subsets(&dir, &subsets, &manifest)?;
    if let Some(path) = &cfg.oracle {
        let oracle = synth::read_oracle(path)?;
        write_eval_reports(cfg.eval_reports_path(), &synth::oracle_reports(&subsets, &oracle)?)?;
    }
    mark(&dir, &fp)?;
    Ok(StageStatus::Ran)
}

fn train_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["kind", "d-model", "ff-dim", "hidden", "layers", "epochs", "lr", "optimizer", "seed"];
    let dir = cfg.stage_dir("selector");
    let (bundle_path, emb_path) = embed_outputs(cfg);
    let split_dir = cfg.stage_dir("split");
    let reports_path = cfg.eval_reports_path();
    let inputs = vec![
        bundle_path.clone(),
        emb_path.clone(),
        split_dir.join(MEMBERSHIP_FILE),
        reports_path.clone(),
    ];
    let fp = fingerprint("train-selector", cfg, KEYS, &inputs)?;
    let model_path = cfg.selector_path();
    if up_to_date(cfg, &dir, &fp, std::slice::from_ref(&model_path)) {
        return Ok(StageStatus::UpToDate);
    }
    let bundle = EmbeddingBundle::load(cfg.stage_dir("embed"))?;
    let embeddings = from_id_matrix(&read_matrix(&emb_path, "embedding")?);
    let subsets = read_subsets(&split_dir, &embeddings)?;
    let subsets = attach_labels(subsets, &read_eval_reports(&reports_path)?)?;
    let arch = Architecture {
        kind: cfg.kind,
        input_dim: bundle.dim(),
        d_model: cfg.d_model,
        ff_dim: cfg.ff_dim,
        layers: cfg.layers,
        hidden: cfg.hidden,
    };
    let mut model = SelectorModel::init(arch, cfg.seed)?;
    model.embedding_fingerprint = Some(bundle.fingerprint.clone());
    let tc = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.lr,
        optimizer: cfg.optimizer,
    };
    let report = train(&mut model, &subsets, &tc)?;
    log::info!(
        "train-selector: {} params, loss {:.6} -> {:.6}",
        model.param_count(),
        report.losses[0],
        report.final_loss
    );
    model.save(&model_path)?;
    let mut curve = String::from("epoch\tloss\n");
    for (e, l) in report.losses.iter().enumerate() {
        curve.push_str(&format!("{e}\t{l}\n"));
    }
    curve.push_str(&format!("final\t{}\n", report.final_loss));
    write_atomic(&dir.join("losses.tsv"), curve.as_bytes())?;
    mark(&dir, &fp)?;
    Ok(StageStatus::Ran)
}

fn curate_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["clusters", "alpha", "no-clustering", "indicator", "seed"];
    let dir = cfg.stage_dir("curate");
    let (bundle_path, emb_path) = embed_outputs(cfg);
    let mut inputs = corpus_inputs(cfg);
    match cfg.indicator {
        Some(_) => inputs.push(cfg.scores.clone()),
        None => inputs.extend([bundle_path, emb_path.clone(), cfg.selector_path()]),
    }
    let fp = fingerprint("curate", cfg, KEYS, &inputs)?;
    let outputs = [dir.join(SELECTION_FILE), dir.join(SELECTED_MANIFEST)];
    if up_to_date(cfg, &dir, &fp, &outputs) {
        return Ok(StageStatus::UpToDate);
    }
    let manifest = load_manifest(&cfg.manifest)?;
    let features = load_features(&cfg.features, &manifest)?;
    let ccfg = CurationConfig {
        clusters: cfg.clusters,
        alpha: cfg.alpha,
        seed: cfg.seed,
        clustering_enabled: cfg.clustering,
    };
    let result = match cfg.indicator {
        Some(ind) => {
            let cache = read_scores(&cfg.scores)?;
            curate(&manifest, &features, &[], Scorer::Indicator(ind, &cache), &ccfg)?
        }
        None => {
            let bundle = EmbeddingBundle::load(cfg.stage_dir("embed"))?;
            let model = SelectorModel::load(cfg.selector_path())?;
            if model.embedding_fingerprint.as_deref() != Some(bundle.fingerprint.as_str()) {
                return Err(Error::ModelLoadError(
                    "selector was trained on a different embedding; rerun train-selector".into(),
                ));
            }
            let embeddings = from_id_matrix(&read_matrix(&emb_path, "embedding")?);
            curate(&manifest, &features, &embeddings, Scorer::Selector(&model), &ccfg)?
        }
    };
    let json = serde_json::to_string_pretty(&result).expect("selection serializes");
    write_atomic(&dir.join(SELECTION_FILE), json.as_bytes())?;
    write_manifest(dir.join(SELECTED_MANIFEST), &selected_triplets(&manifest, &result))?;
    log::info!("curate: selected {} of {} (quotas {:?})", result.alpha(), manifest.len(), result.quotas);
    mark(&dir, &fp)?;
    Ok(StageStatus::Ran)
}

fn selected_triplets(manifest: &[Triplet], result: &SelectionResult) -> Vec<Triplet> {
    let chosen: std::collections::HashSet<&str> = result.selected.iter().map(String::as_str).collect();
    manifest.iter().filter(|t| chosen.contains(t.id.as_str())).cloned().collect()
}

fn report_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    const KEYS: &[&str] = &["seed"];
    let dir = cfg.stage_dir("report");
    let selection = cfg.stage_dir("curate").join(SELECTION_FILE);
    let mut inputs = vec![selection.clone(), cfg.manifest.clone()];
    inputs.extend(cfg.oracle.clone());
    let fp = fingerprint("report", cfg, KEYS, &inputs)?;
    if up_to_date(cfg, &dir, &fp, &[dir.join("report.json"), dir.join(SELECTED_MANIFEST)]) {
        return Ok(StageStatus::UpToDate);
    }
    let text = fs::read_to_string(&selection).map_err(|e| Error::io(&selection, e))?;
    let result: SelectionResult = serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
        path: selection.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let manifest = load_manifest(&cfg.manifest)?;
    let oracle = cfg.oracle.as_ref().map(synth::read_oracle).transpose()?;
    let summary = write_report(&dir, &result, &manifest, oracle.as_ref(), cfg.seed)?;
    if let Some(o) = &summary.oracle {
        log::info!(
            "report: oracle mean {:.4} selected vs {:.4} random, uplift {:.4} ({:.1} SE)",
            o.selected_mean,
            o.random_mean,
            o.uplift,
            o.z
        );
    }
    mark(&dir, &fp)?;
    Ok(StageStatus::Ran)
}

fn synth_stage(cfg: &PipelineConfig) -> Result<StageStatus> {
    let corpus = synth::generate(&synth::SynthConfig::new(cfg.n, cfg.seed))?;
    synth::write_corpus(&cfg.out, &corpus)?;
    Ok(StageStatus::Ran)
}
