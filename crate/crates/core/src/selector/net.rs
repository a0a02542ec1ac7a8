//! Forward passes and hand-written reverse-mode gradients.
//!
//! Activations are row-major `n × width` buffers, one row per sequence item.

use super::{SelectorKind, SelectorModel};

pub(super) struct Tape {
    pub output: f64,
    inner: Inner,
}

enum Inner {
    Linear,
    Mlp { h1: Vec<f64>, h2: Vec<f64> },
    Attention { layers: Vec<LayerTape>, pooled: Vec<f64> },
}

struct LayerTape {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    h1: Vec<f64>,
    u: Vec<f64>,
}

/// Start offset of every parameter block, plus the total as a sentinel.
fn offsets(model: &SelectorModel) -> Vec<usize> {
    let mut out = Vec::with_capacity(model.shapes.len() + 1);
    let mut at = 0;
    for s in &model.shapes {
        out.push(at);
        at += s.len();
    }
    out.push(at);
    out
}

struct Params<'a> {
    p: &'a [f64],
    off: Vec<usize>,
}

impl<'a> Params<'a> {
    fn new(model: &'a SelectorModel) -> Self {
        Self {
            p: &model.params,
            off: offsets(model),
        }
    }

    fn block(&self, i: usize) -> &'a [f64] {
        &self.p[self.off[i]..self.off[i + 1]]
    }

    /// Index of the last two blocks (head weight and bias).
    fn head(&self) -> (usize, usize) {
        let n = self.off.len() - 1;
        (n - 2, n - 1)
    }
}

/// `y_i = W x_i + b` for each of the `n` rows of `x`.
fn affine(x: &[f64], din: usize, w: &[f64], dout: usize, b: Option<&[f64]>) -> Vec<f64> {
    let n = x.len() / din;
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        for o in 0..dout {
            let wo = &w[o * din..(o + 1) * din];
            let mut s = b.map_or(0.0, |b| b[o]);
            for (a, c) in wo.iter().zip(xi) {
                s += a * c;
            }
            y[i * dout + o] = s;
        }
    }
    y
}

/// Accumulates `∂W += Σ dy_i ⊗ x_i` (and `∂b += Σ dy_i`) into `grad` and
/// returns `dx_i = Wᵀ dy_i` when asked.
#[allow(clippy::too_many_arguments)]
fn affine_back(
    x: &[f64],
    din: usize,
    w: &[f64],
    dout: usize,
    dy: &[f64],
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
    want_dx: bool,
) -> Vec<f64> {
    let n = x.len() / din;
    for i in 0..n {
        let xi = &x[i * din..(i + 1) * din];
        for o in 0..dout {
            let g = dy[i * dout + o];
            if g != 0.0 {
                for (acc, xv) in gw[o * din..(o + 1) * din].iter_mut().zip(xi) {
                    *acc += g * xv;
                }
            }
        }
    }
    if let Some(gb) = gb {
        for i in 0..n {
            for o in 0..dout {
                gb[o] += dy[i * dout + o];
            }
        }
    }
    if !want_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; n * din];
    for i in 0..n {
        for o in 0..dout {
            let g = dy[i * dout + o];
            if g == 0.0 {
                continue;
            }
            for (acc, wv) in dx[i * din..(i + 1) * din].iter_mut().zip(&w[o * din..(o + 1) * din]) {
                *acc += g * wv;
            }
        }
    }
    dx
}

/// Two disjoint mutable blocks of `grad`; `a` must come before `b`.
fn pair<'g>(grad: &'g mut [f64], off: &[usize], a: usize, b: usize) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert!(a < b);
    let (left, right) = grad.split_at_mut(off[b]);
    (&mut left[off[a]..off[a + 1]], &mut right[..off[b + 1] - off[b]])
}

fn flatten(seq: &[&[f64]]) -> Vec<f64> {
    seq.iter().flat_map(|r| r.iter().copied()).collect()
}

pub(super) fn forward(model: &SelectorModel, seq: &[&[f64]]) -> Tape {
    let p = Params::new(model);
    let arch = &model.arch;
    let d = arch.input_dim;
    let n = seq.len();
    let nf = n as f64;
    let (hw, hb) = p.head();
    let x = flatten(seq);
    match arch.kind {
        SelectorKind::Linear => {
            let s = affine(&x, d, p.block(hw), 1, Some(p.block(hb)));
            Tape {
                output: s.iter().sum::<f64>() / nf,
                inner: Inner::Linear,
            }
        }
        SelectorKind::Mlp => {
            let h = arch.hidden;
            let mut h1 = affine(&x, d, p.block(0), h, Some(p.block(1)));
            h1.iter_mut().for_each(|v| *v = v.tanh());
            let mut h2 = affine(&h1, h, p.block(2), h, Some(p.block(3)));
            h2.iter_mut().for_each(|v| *v = v.tanh());
            let s = affine(&h2, h, p.block(hw), 1, Some(p.block(hb)));
            Tape {
                output: s.iter().sum::<f64>() / nf,
                inner: Inner::Mlp { h1, h2 },
            }
        }
        SelectorKind::Attention => {
            let (m, f) = (arch.d_model, arch.ff_dim);
            let scale = 1.0 / (m as f64).sqrt();
            let mut h = affine(&x, d, p.block(0), m, Some(p.block(1)));
            let mut layers = Vec::with_capacity(arch.layers);
            for l in 0..arch.layers {
                let base = 2 + 8 * l;
                let q = affine(&h, m, p.block(base), m, None);
                let k = affine(&h, m, p.block(base + 1), m, None);
                let v = affine(&h, m, p.block(base + 2), m, None);
                let mut attn = vec![0.0; n * n];
                for i in 0..n {
                    let row = &mut attn[i * n..(i + 1) * n];
                    for j in 0..n {
                        row[j] = scale * dot(&q[i * m..(i + 1) * m], &k[j * m..(j + 1) * m]);
                    }
                    softmax_in_place(row);
                }
                let mut ctx = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..n {
                        let a = attn[i * n + j];
                        for c in 0..m {
                            ctx[i * m + c] += a * v[j * m + c];
                        }
                    }
                }
                let o = affine(&ctx, m, p.block(base + 3), m, None);
                let h1: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
                let mut u = affine(&h1, m, p.block(base + 4), f, Some(p.block(base + 5)));
                u.iter_mut().for_each(|v| *v = v.tanh());
                let g = affine(&u, f, p.block(base + 6), m, Some(p.block(base + 7)));
                let h2: Vec<f64> = h1.iter().zip(&g).map(|(a, b)| a + b).collect();
                layers.push(LayerTape {
                    input: std::mem::replace(&mut h, h2),
                    q,
                    k,
                    v,
                    attn,
                    ctx,
                    h1,
                    u,
                });
            }
            let mut pooled = vec![0.0; m];
            for i in 0..n {
                for c in 0..m {
                    pooled[c] += h[i * m + c];
                }
            }
            pooled.iter_mut().for_each(|v| *v /= nf);
            let output = dot(p.block(hw), &pooled) + p.block(hb)[0];
            Tape {
                output,
                inner: Inner::Attention { layers, pooled },
            }
        }
    }
}

/// Adds `dout · ∂output/∂params` into `grad`.
pub(super) fn backward(model: &SelectorModel, seq: &[&[f64]], tape: &Tape, dout: f64, grad: &mut [f64]) {
    let p = Params::new(model);
    let off = &p.off;
    let arch = &model.arch;
    let d = arch.input_dim;
    let n = seq.len();
    let nf = n as f64;
    let (hw, hb) = p.head();
    let x = flatten(seq);
    match &tape.inner {
        Inner::Linear => {
            let ds = vec![dout / nf; n];
            let (gw, gb) = pair(grad, off, hw, hb);
            affine_back(&x, d, p.block(hw), 1, &ds, gw, Some(gb), false);
        }
        Inner::Mlp { h1, h2 } => {
            let h = arch.hidden;
            let ds = vec![dout / nf; n];
            let dh2 = {
                let (gw, gb) = pair(grad, off, hw, hb);
                affine_back(h2, h, p.block(hw), 1, &ds, gw, Some(gb), true)
            };
            let dz2: Vec<f64> = dh2.iter().zip(h2).map(|(g, t)| g * (1.0 - t * t)).collect();
            let dh1 = {
                let (gw, gb) = pair(grad, off, 2, 3);
                affine_back(h1, h, p.block(2), h, &dz2, gw, Some(gb), true)
            };
            let dz1: Vec<f64> = dh1.iter().zip(h1).map(|(g, t)| g * (1.0 - t * t)).collect();
            let (gw, gb) = pair(grad, off, 0, 1);
            affine_back(&x, d, p.block(0), h, &dz1, gw, Some(gb), false);
        }
        Inner::Attention { layers, pooled } => {
            let (m, f) = (arch.d_model, arch.ff_dim);
            let scale = 1.0 / (m as f64).sqrt();
            for (g, v) in grad[off[hw]..off[hw + 1]].iter_mut().zip(pooled) {
                *g += dout * v;
            }
            grad[off[hb]] += dout;
            let head = p.block(hw);
            let mut dh = vec![0.0; n * m];
            for i in 0..n {
                for c in 0..m {
                    dh[i * m + c] = dout * head[c] / nf;
                }
            }
            for (l, t) in layers.iter().enumerate().rev() {
                let base = 2 + 8 * l;
                // feed-forward branch: h2 = h1 + W2 tanh(W1 h1 + b1) + b2
                let du = {
                    let (gw, gb) = pair(grad, off, base + 6, base + 7);
                    affine_back(&t.u, f, p.block(base + 6), m, &dh, gw, Some(gb), true)
                };
                let dz: Vec<f64> = du.iter().zip(&t.u).map(|(g, u)| g * (1.0 - u * u)).collect();
                let dh1_ff = {
                    let (gw, gb) = pair(grad, off, base + 4, base + 5);
                    affine_back(&t.h1, m, p.block(base + 4), f, &dz, gw, Some(gb), true)
                };
                let dh1: Vec<f64> = dh.iter().zip(&dh1_ff).map(|(a, b)| a + b).collect();

                // attention branch: h1 = input + Wo ctx
                let o0 = off[base + 3];
                let dctx = affine_back(
                    &t.ctx,
                    m,
                    p.block(base + 3),
                    m,
                    &dh1,
                    &mut grad[o0..o0 + m * m],
                    None,
                    true,
                );
                let mut dv = vec![0.0; n * m];
                let mut ds = vec![0.0; n * n];
                for i in 0..n {
                    let dci = &dctx[i * m..(i + 1) * m];
                    let arow = &t.attn[i * n..(i + 1) * n];
                    let mut da = vec![0.0; n];
                    for j in 0..n {
                        da[j] = dot(dci, &t.v[j * m..(j + 1) * m]);
                        for c in 0..m {
                            dv[j * m + c] += arow[j] * dci[c];
                        }
                    }
                    let weighted: f64 = arow.iter().zip(&da).map(|(a, g)| a * g).sum();
                    for j in 0..n {
                        ds[i * n + j] = arow[j] * (da[j] - weighted);
                    }
                }
                let mut dq = vec![0.0; n * m];
                let mut dk = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..n {
                        let s = ds[i * n + j] * scale;
                        if s == 0.0 {
                            continue;
                        }
                        for c in 0..m {
                            dq[i * m + c] += s * t.k[j * m + c];
                            dk[j * m + c] += s * t.q[i * m + c];
                        }
                    }
                }
                let mut next = dh1;
                for (slot, dy) in [(base, &dq), (base + 1, &dk), (base + 2, &dv)] {
                    let o = off[slot];
                    let dx = affine_back(
                        &t.input,
                        m,
                        p.block(slot),
                        m,
                        dy,
                        &mut grad[o..o + m * m],
                        None,
                        true,
                    );
                    next.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                }
                dh = next;
            }
            let (gw, gb) = pair(grad, off, 0, 1);
            affine_back(&x, d, p.block(0), m, &dh, gw, Some(gb), false);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::{Architecture, SelectorKind, SelectorModel};

    fn randomized(kind: SelectorKind, d: usize, seed: u64) -> SelectorModel {
        let mut arch = Architecture::new(kind, d);
        arch.d_model = 5;
        arch.ff_dim = 7;
        arch.hidden = 6;
        let mut m = SelectorModel::init(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-0.6..0.6));
        m.target_mean = 1.5;
        m
    }

    fn batch(d: usize, seed: u64) -> Vec<(Vec<Vec<f64>>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|b| {
                let len = b + 1 + (b % 2) * 2;
                let seq = (0..len).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                (seq, rng.gen_range(-2.0..2.0))
            })
            .collect()
    }

    /// Central differences in every coordinate.
    fn check_gradient(kind: SelectorKind) {
        let model = randomized(kind, 4, 17);
        let data = batch(4, 5);
        let (_, grad) = model.loss_and_grad(&data).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..model.params.len() {
            let mut plus = model.clone();
            plus.params[i] += eps;
            let mut minus = model.clone();
            minus.params[i] -= eps;
            let fd = (plus.loss_and_grad(&data).unwrap().0 - minus.loss_and_grad(&data).unwrap().0) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "{kind}: worst relative error {worst}");
    }

    #[test]
    fn linear_gradient() {
        check_gradient(SelectorKind::Linear);
    }

    #[test]
    fn mlp_gradient() {
        check_gradient(SelectorKind::Mlp);
    }

    #[test]
    fn attention_gradient() {
        check_gradient(SelectorKind::Attention);
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut row = [1000.0, 1000.0, -1000.0];
        super::softmax_in_place(&mut row);
        assert_eq!(row, [0.5, 0.5, 0.0]);
    }
}
