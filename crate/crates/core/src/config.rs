//! Pipeline configuration: defaults, a flat `key = value` file, and flag
//! overrides. Every key is also a command-line flag of the same name.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embedding::ReducerMode;
use crate::error::{Error, Result};
use crate::indicators::Indicator;
use crate::selector::{Optimizer, SelectorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    /// Reward and GPT scores must already be in the cache.
    Cache,
    /// Missing scores are fetched from the configured HTTP endpoints.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetSpace {
    /// Cluster training subsets in the assembled embedding space.
    Embedding,
    /// Cluster training subsets on raw image features.
    Image,
}

/// One configuration key. `value` is `None` for switches.
#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub value: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, value: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        value: Some(value),
        help,
    }
}

const fn switch(key: &'static str, help: &'static str) -> KeySpec {
    KeySpec { key, value: None, help }
}

pub const KEYS: &[KeySpec] = &[
    key("work-dir", "DIR", "directory for stage outputs [default: work]"),
    key("manifest", "PATH", "corpus manifest [default: manifest.jsonl]"),
    key("features", "DIR", "feature matrix directory [default: features]"),
    key("score-cache", "PATH", "indicator score cache [default: scores.jsonl]"),
    key("eval-reports", "PATH", "subset eval reports [default: <work-dir>/split/eval_reports.jsonl]"),
    key("oracle", "PATH", "planted-quality oracle file (synthetic corpora)"),
    key("selector", "PATH", "selector model file [default: <work-dir>/selector/selector.txt]"),
    key("providers", "cache|http", "where missing reward/GPT scores come from [default: cache]"),
    key("retries", "N", "retries per scoring request [default: 3]"),
    key("workers", "N", "concurrent scoring requests [default: 4]"),
    key("timeout", "SECS", "HTTP timeout per request [default: 60]"),
    key("subsets", "N", "number of training subsets [default: 30]"),
    key("capacity", "N|auto", "members per training subset; auto = floor(N/subsets) [default: auto]"),
    key("subset-space", "embedding|image", "space the training subsets are clustered in [default: embedding]"),
    key("feature-size", "M", "PCA components in the embedding [default: 6]"),
    key("reducer", "joint|separate", "one PCA over image+text or one per modality [default: joint]"),
    switch("no-standardize", "keep raw indicator values in the embedding"),
    key("kind", "attention|mlp|linear", "selector architecture [default: attention]"),
    key("d-model", "N", "attention width [default: 16]"),
    key("ff-dim", "N", "attention feed-forward width [default: 32]"),
    key("hidden", "N", "MLP hidden width [default: 32]"),
    key("layers", "N", "attention layers [default: 2]"),
    key("epochs", "N", "training epochs [default: 20]"),
    key("lr", "RATE", "learning rate [default: 0.01]"),
    key("optimizer", "adam|sgd", "optimizer [default: adam]"),
    key("clusters", "K", "curation clusters [default: 10]"),
    key("alpha", "N", "size of the curated subset [default: 200]"),
    switch("no-clustering", "curate from a single cluster"),
    key("indicator", "clip|length|reward|gpt", "rank by one raw indicator instead of the selector"),
    key("seed", "N", "seed for every randomized step [default: 0]"),
    key("n", "N", "synth: number of samples [default: 3439]"),
    key("out", "DIR", "synth: output directory [default: .]"),
    switch("force", "rerun stages even when their fingerprints match"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub scores: PathBuf,
    pub eval_reports: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub selector: Option<PathBuf>,
    pub provider: ProviderMode,
    pub retries: usize,
    pub workers: usize,
    pub timeout_secs: u64,
    pub subsets: usize,
    pub capacity: Option<usize>,
    pub subset_space: SubsetSpace,
    pub feature_size: usize,
    pub reducer: ReducerMode,
    pub standardize: bool,
    pub kind: SelectorKind,
    pub d_model: usize,
    pub ff_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub clusters: usize,
    pub alpha: usize,
    pub clustering: bool,
    pub indicator: Option<Indicator>,
    pub seed: u64,
    pub n: usize,
    pub out: PathBuf,
    pub force: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            work_dir: "work".into(),
            manifest: "manifest.jsonl".into(),
            features: "features".into(),
            scores: "scores.jsonl".into(),
            eval_reports: None,
            oracle: None,
            selector: None,
            provider: ProviderMode::Cache,
            retries: 3,
            workers: 4,
            timeout_secs: 60,
            subsets: 30,
            capacity: None,
            subset_space: SubsetSpace::Embedding,
            feature_size: 6,
            reducer: ReducerMode::Joint,
            standardize: true,
            kind: SelectorKind::Attention,
            d_model: 16,
            ff_dim: 32,
            hidden: 32,
            layers: 2,
            epochs: 20,
            lr: 0.01,
            optimizer: Optimizer::Adam,
            clusters: 10,
            alpha: 200,
            clustering: true,
            indicator: None,
            seed: 0,
            n: 3439,
            out: ".".into(),
            force: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::BadConfig(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::BadConfig(format!("invalid value {value:?} for {key}: expected true or false"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "work-dir" => self.work_dir = value.into(),
            "manifest" => self.manifest = value.into(),
            "features" => self.features = value.into(),
            "score-cache" => self.scores = value.into(),
            "eval-reports" => self.eval_reports = Some(value.into()),
            "oracle" => self.oracle = Some(value.into()),
            "selector" => self.selector = Some(value.into()),
            "providers" => {
                self.provider = match value {
                    "cache" => ProviderMode::Cache,
                    "http" => ProviderMode::Http,
                    _ => return Err(Error::BadConfig(format!("invalid providers {value:?}"))),
                }
            }
            "retries" => self.retries = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "timeout" => self.timeout_secs = parse(key, value)?,
            "subsets" => self.subsets = parse(key, value)?,
            "capacity" => {
                self.capacity = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "subset-space" => {
                self.subset_space = match value {
                    "embedding" => SubsetSpace::Embedding,
                    "image" => SubsetSpace::Image,
                    _ => return Err(Error::BadConfig(format!("invalid subset-space {value:?}"))),
                }
            }
            "feature-size" => self.feature_size = parse(key, value)?,
            "reducer" => self.reducer = value.parse()?,
            "no-standardize" => self.standardize = !parse_bool(key, value)?,
            "kind" => self.kind = value.parse()?,
            "d-model" => self.d_model = parse(key, value)?,
            "ff-dim" => self.ff_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "clusters" => self.clusters = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "no-clustering" => self.clustering = !parse_bool(key, value)?,
            "indicator" => {
                self.indicator = match value {
                    "none" => None,
                    v => Some(v.parse()?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "out" => self.out = value.into(),
            "force" => self.force = parse_bool(key, value)?,
            _ => return Err(Error::BadConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// The current value of `key`, in the form `set` accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Path| p.display().to_string();
        let opt = |p: &Option<PathBuf>| p.as_deref().map_or_else(|| "-".to_string(), path);
        Ok(match key {
            "work-dir" => path(&self.work_dir),
            "manifest" => path(&self.manifest),
            "features" => path(&self.features),
            "score-cache" => path(&self.scores),
            "eval-reports" => opt(&self.eval_reports),
            "oracle" => opt(&self.oracle),
            "selector" => opt(&self.selector),
            "providers" => match self.provider {
                ProviderMode::Cache => "cache".into(),
                ProviderMode::Http => "http".into(),
            },
            "retries" => self.retries.to_string(),
            "workers" => self.workers.to_string(),
            "timeout" => self.timeout_secs.to_string(),
            "subsets" => self.subsets.to_string(),
            "capacity" => self.capacity.map_or_else(|| "auto".into(), |c| c.to_string()),
            "subset-space" => match self.subset_space {
                SubsetSpace::Embedding => "embedding".into(),
                SubsetSpace::Image => "image".into(),
            },
            "feature-size" => self.feature_size.to_string(),
            "reducer" => self.reducer.to_string(),
            "no-standardize" => (!self.standardize).to_string(),
            "kind" => self.kind.to_string(),
            "d-model" => self.d_model.to_string(),
            "ff-dim" => self.ff_dim.to_string(),
            "hidden" => self.hidden.to_string(),
            "layers" => self.layers.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => format!("{:?}", self.lr),
            "optimizer" => match self.optimizer {
                Optimizer::Adam => "adam".into(),
                Optimizer::Sgd => "sgd".into(),
            },
            "clusters" => self.clusters.to_string(),
            "alpha" => self.alpha.to_string(),
            "no-clustering" => (!self.clustering).to_string(),
            "indicator" => self.indicator.map_or_else(|| "none".into(), |i| i.to_string()),
            "seed" => self.seed.to_string(),
            "n" => self.n.to_string(),
            "out" => path(&self.out),
            "force" => self.force.to_string(),
            _ => return Err(Error::BadConfig(format!("unknown key {key:?}"))),
        })
    }

    /// Applies a config file. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::BadConfig(format!("{}:{}: expected key = value", source.display(), idx + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::BadConfig(format!("{}:{}: {e}", source.display(), idx + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Defaults, then the optional file, then flag overrides in order.
    pub fn resolve<'a>(
        file: Option<&Path>,
        flags: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// `key=value` lines for the given keys, used in stage fingerprints.
    pub fn describe(&self, keys: &[&str]) -> Result<String> {
        let mut out = String::new();
        for k in keys {
            out.push_str(k);
            out.push('=');
            out.push_str(&self.get(k)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.work_dir.join(stage)
    }

    pub fn eval_reports_path(&self) -> PathBuf {
        self.eval_reports
            .clone()
            .unwrap_or_else(|| self.stage_dir("split").join("eval_reports.jsonl"))
    }

    pub fn selector_path(&self) -> PathBuf {
        self.selector
            .clone()
            .unwrap_or_else(|| self.stage_dir("selector").join("selector.txt"))
    }
}
