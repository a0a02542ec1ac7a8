//! The learned data selector.
//!
//! A selector maps a *sequence* of item embeddings to one scalar. Training
//! sequences are whole subsets (regressed onto their quality label); at
//! selection time each item is scored as a length-1 sequence. All three
//! architectures are permutation invariant: per-item models average their
//! outputs, the attention model has no positional encoding and mean-pools.
//! Inputs are put into a canonical row order before evaluation, so
//! reordering a sequence does not even change rounding.

mod io;
mod net;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use io::{format_hex_f64, parse_hex_f64, FORMAT_VERSION};
pub use train::{train, Optimizer, TrainConfig, TrainReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectorKind {
    Linear,
    Mlp,
    Attention,
}

impl SelectorKind {
    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Linear => "linear",
            SelectorKind::Mlp => "mlp",
            SelectorKind::Attention => "attention",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SelectorKind::Linear),
            "mlp" => Ok(SelectorKind::Mlp),
            "attention" => Ok(SelectorKind::Attention),
            _ => Err(Error::BadConfig(format!("unknown selector kind {s:?}"))),
        }
    }
}

/// Architecture hyperparameters. Fields irrelevant to `kind` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub kind: SelectorKind,
    pub input_dim: usize,
    /// Attention model width.
    pub d_model: usize,
    /// Attention feed-forward width.
    pub ff_dim: usize,
    pub layers: usize,
    /// MLP hidden width.
    pub hidden: usize,
}

impl Architecture {
    pub fn new(kind: SelectorKind, input_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            d_model: 16,
            ff_dim: 32,
            layers: 2,
            hidden: 32,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.input_dim == 0 {
            return bad("selector input_dim must be >= 1");
        }
        match self.kind {
            SelectorKind::Attention if self.d_model == 0 || self.ff_dim == 0 || self.layers == 0 => {
                bad("attention selector needs d_model, ff_dim and layers >= 1")
            }
            SelectorKind::Mlp if self.hidden == 0 => bad("mlp selector needs hidden >= 1"),
            _ => Ok(()),
        }
    }
}

/// Name and (rows, cols) of one parameter block; vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamShape {
    fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_bias(&self) -> bool {
        self.cols == 1 && self.name.ends_with("_b")
    }
}

/// The parameter blocks of an architecture, in storage order. Weight
/// matrices are `out × in`.
pub fn shape_table(arch: &Architecture) -> Vec<ParamShape> {
    let d = arch.input_dim;
    let mut t = Vec::new();
    match arch.kind {
        SelectorKind::Linear => {}
        SelectorKind::Mlp => {
            let h = arch.hidden;
            t.push(ParamShape::new("fc1_w", h, d));
            t.push(ParamShape::new("fc1_b", h, 1));
            t.push(ParamShape::new("fc2_w", h, h));
            t.push(ParamShape::new("fc2_b", h, 1));
        }
        SelectorKind::Attention => {
            let (m, f) = (arch.d_model, arch.ff_dim);
            t.push(ParamShape::new("in_w", m, d));
            t.push(ParamShape::new("in_b", m, 1));
            for l in 0..arch.layers {
                for name in ["wq", "wk", "wv", "wo"] {
                    t.push(ParamShape::new(format!("l{l}.{name}"), m, m));
                }
                t.push(ParamShape::new(format!("l{l}.ff1_w"), f, m));
                t.push(ParamShape::new(format!("l{l}.ff1_b"), f, 1));
                t.push(ParamShape::new(format!("l{l}.ff2_w"), m, f));
                t.push(ParamShape::new(format!("l{l}.ff2_b"), m, 1));
            }
        }
    }
    let head_in = match arch.kind {
        SelectorKind::Linear => d,
        SelectorKind::Mlp => arch.hidden,
        SelectorKind::Attention => arch.d_model,
    };
    t.push(ParamShape::new("head_w", 1, head_in));
    t.push(ParamShape::new("head_b", 1, 1));
    t
}

/// A selector: architecture, flat parameter vector and an output offset
/// (the mean training label) added to the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub arch: Architecture,
    pub shapes: Vec<ParamShape>,
    pub params: Vec<f64>,
    pub target_mean: f64,
    /// Fingerprint of the embedding bundle the model was trained against.
    pub embedding_fingerprint: Option<String>,
}

impl SelectorModel {
    /// Weights `U(−1/√fan_in, 1/√fan_in)`, biases zero, scalar head zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shapes = shape_table(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shapes.iter().map(ParamShape::len).sum());
        for s in &shapes {
            if s.name.starts_with("head") || s.is_bias() {
                params.extend(std::iter::repeat_n(0.0, s.len()));
            } else {
                let bound = 1.0 / (s.cols as f64).sqrt();
                params.extend((0..s.len()).map(|_| rng.gen_range(-bound..bound)));
            }
        }
        Ok(Self {
            arch,
            shapes,
            params,
            target_mean: 0.0,
            embedding_fingerprint: None,
        })
    }

    pub fn kind(&self) -> SelectorKind {
        self.arch.kind
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_sequence(&self, seq: &[&[f64]]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::BadConfig("selector input sequence is empty".into()));
        }
        if let Some(bad) = seq.iter().find(|x| x.len() != self.input_dim()) {
            return Err(Error::dims(self.input_dim(), bad.len(), "selector input"));
        }
        Ok(())
    }

    /// Predicted quality of a sequence of item embeddings.
    pub fn predict<R: AsRef<[f64]>>(&self, sequence: &[R]) -> Result<f64> {
        let seq = canonical_order(sequence);
        self.check_sequence(&seq)?;
        let raw = net::forward(self, &seq).output;
        Ok(self.target_mean + raw)
    }

    /// Per-item scores, each item a length-1 sequence.
    pub fn score_items<R: AsRef<[f64]>>(&self, items: &[R]) -> Result<Vec<f64>> {
        items.iter().map(|x| self.predict(std::slice::from_ref(x))).collect()
    }

    /// Mean squared error over `(sequence, label)` pairs and its gradient
    /// with respect to `params`.
    pub fn loss_and_grad<R: AsRef<[f64]>>(&self, batch: &[(Vec<R>, f64)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::BadConfig("empty training batch".into()));
        }
        let b = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (sequence, label) in batch {
            let seq = canonical_order(sequence);
            self.check_sequence(&seq)?;
            let tape = net::forward(self, &seq);
            let pred = self.target_mean + tape.output;
            let err = pred - label;
            loss += err * err / b;
            net::backward(self, &seq, &tape, 2.0 * err / b, &mut grad);
        }
        Ok((loss, grad))
    }
}

/// Rows sorted lexicographically by `f64::total_cmp`.
fn canonical_order<R: AsRef<[f64]>>(sequence: &[R]) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = sequence.iter().map(AsRef::as_ref).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.len().cmp(&b.len()))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_head_predicts_zero() {
        for kind in [SelectorKind::Linear, SelectorKind::Mlp, SelectorKind::Attention] {
            let m = SelectorModel::init(Architecture::new(kind, 10), 3).unwrap();
            assert_eq!(m.predict(&seq(5, 10, 1)).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = SelectorModel::init(Architecture::new(SelectorKind::Attention, 10), 9).unwrap();
        let b = SelectorModel::init(Architecture::new(SelectorKind::Attention, 10), 9).unwrap();
        let c = SelectorModel::init(Architecture::new(SelectorKind::Attention, 10), 10).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn init_rejects_bad_architecture() {
        assert!(matches!(
            SelectorModel::init(Architecture::new(SelectorKind::Linear, 0), 0),
            Err(Error::BadConfig(_))
        ));
        assert!(matches!(
            SelectorModel::init(Architecture::new(SelectorKind::Attention, 4).with_layers(0), 0),
            Err(Error::BadConfig(_))
        ));
        assert!("transformer".parse::<SelectorKind>().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let m = SelectorModel::init(Architecture::new(SelectorKind::Mlp, 4), 0).unwrap();
        assert!(matches!(m.predict(&[vec![1.0; 3]]), Err(Error::DimensionMismatch { .. })));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(m.predict(&empty).is_err());
    }

    #[test]
    fn duplicated_item_pools_to_same_value() {
        let mut m = SelectorModel::init(Architecture::new(SelectorKind::Attention, 6), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
        let x = seq(1, 6, 2);
        let one = m.predict(&x).unwrap();
        let three = m.predict(&[x[0].clone(), x[0].clone(), x[0].clone()]).unwrap();
        assert!((one - three).abs() <= 1e-12 * one.abs().max(1.0), "{one} vs {three}");
    }

    #[test]
    fn linear_prediction_is_mean_of_affine_scores() {
        let mut m = SelectorModel::init(Architecture::new(SelectorKind::Linear, 3), 0).unwrap();
        m.params = vec![0.5, -1.25, 2.0, 0.3];
        let s = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.25]];
        let expected = ((0.5 - 2.5 + 6.0 + 0.3) + (-0.5 - 0.625 + 0.5 + 0.3)) / 2.0;
        assert!((m.predict(&s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_matches_closed_form() {
        let mut m = SelectorModel::init(Architecture::new(SelectorKind::Linear, 3), 0).unwrap();
        m.params = vec![0.2, -0.4, 0.1, 0.05];
        let batch: Vec<(Vec<Vec<f64>>, f64)> = (0..5).map(|i| (seq(4, 3, i), i as f64 * 0.3)).collect();
        let (loss, grad) = m.loss_and_grad(&batch).unwrap();
        let b = batch.len() as f64;
        let mut want = [0.0; 4];
        let mut want_loss = 0.0;
        for (s, y) in &batch {
            let xbar: Vec<f64> = (0..3).map(|c| s.iter().map(|r| r[c]).sum::<f64>() / s.len() as f64).collect();
            let pred = (0..3).map(|c| m.params[c] * xbar[c]).sum::<f64>() + m.params[3];
            let r = pred - y;
            want_loss += r * r / b;
            for c in 0..3 {
                want[c] += 2.0 * r * xbar[c] / b;
            }
            want[3] += 2.0 * r / b;
        }
        assert!((loss - want_loss).abs() < 1e-10);
        for (g, w) in grad.iter().zip(want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
        }
    }

    #[test]
    fn attention_parameter_count() {
        let m = SelectorModel::init(Architecture::new(SelectorKind::Attention, 10), 0).unwrap();
        let per_layer = 4 * 16 * 16 + (32 * 16 + 32) + (16 * 32 + 16);
        assert_eq!(m.param_count(), (10 * 16 + 16) + 2 * per_layer + 17);
        assert_eq!(m.param_count(), 4385);
    }

    #[test]
    fn perfect_model_has_zero_loss_and_gradient() {
        let mut m = SelectorModel::init(Architecture::new(SelectorKind::Mlp, 3), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-0.5..0.5));
        let batch: Vec<(Vec<Vec<f64>>, f64)> = (0..4)
            .map(|i| {
                let s = seq(3, 3, i);
                let y = m.predict(&s).unwrap();
                (s, y)
            })
            .collect();
        let (loss, grad) = m.loss_and_grad(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }
}
