//! Browser demo: spectral clustering of 2-D blobs, quota allocation and
//! cluster-stratified top-k selection, all from the core crate.
//!
//! The plain functions are the tested surface; the `wasm_*` wrappers only
//! adapt errors to strings for JavaScript.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

use curator::curate::{allocate, select_stratified};
use curator::numerics::{spectral_cluster, Matrix};

/// `k` Gaussian blobs of `per` points on a circle of radius 4, flattened
/// as `[x0, y0, x1, y1, …]`, followed by a per-point quality score in
/// `[0, 1]` that rises towards the upper right.
pub fn blobs(k: usize, per: usize, spread: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xy = Vec::with_capacity(2 * k * per);
    let mut quality = Vec::with_capacity(k * per);
    for c in 0..k {
        let angle = std::f64::consts::TAU * c as f64 / k.max(1) as f64;
        let (cx, cy) = (4.0 * angle.cos(), 4.0 * angle.sin());
        for _ in 0..per {
            let dx: f64 = rng.sample::<f64, _>(StandardNormal) * spread;
            let dy: f64 = rng.sample::<f64, _>(StandardNormal) * spread;
            xy.push(cx + dx);
            xy.push(cy + dy);
            let noise: f64 = rng.gen_range(-0.3..0.3);
            quality.push(1.0 / (1.0 + (-(dx + dy) / spread.max(1e-9) - noise).exp()));
        }
    }
    (xy, quality)
}

fn points(xy: &[f64]) -> Result<Matrix, String> {
    if !xy.len().is_multiple_of(2) {
        return Err("coordinates must come in x, y pairs".into());
    }
    Ok(Matrix::from_vec(xy.len() / 2, 2, xy.to_vec()))
}

/// Spectral cluster labels for the flattened points.
pub fn cluster(xy: &[f64], k: usize, seed: u64) -> Result<Vec<usize>, String> {
    let assignment = spectral_cluster(&points(xy)?, k, seed).map_err(|e| e.to_string())?;
    Ok(assignment.labels.iter().map(|l| l.unwrap_or(0)).collect())
}

/// Per-cluster quotas for a budget of `alpha`.
pub fn quotas(sizes: &[usize], alpha: usize) -> Result<Vec<usize>, String> {
    allocate(sizes, alpha).map_err(|e| e.to_string())
}

/// Indices of the selected points, ascending.
pub fn select(labels: &[usize], scores: &[f64], alpha: usize) -> Result<Vec<usize>, String> {
    let ids: Vec<String> = (0..labels.len()).map(|i| format!("{i:08}")).collect();
    let result = select_stratified(&ids, labels, scores, alpha).map_err(|e| e.to_string())?;
    Ok(result.selected.iter().map(|id| id.parse().expect("ids are indices")).collect())
}

fn to_u32(v: Vec<usize>) -> Vec<u32> {
    v.into_iter().map(|x| x as u32).collect()
}

fn to_usize(v: &[u32]) -> Vec<usize> {
    v.iter().map(|&x| x as usize).collect()
}

#[wasm_bindgen]
pub struct Blobs {
    xy: Vec<f64>,
    quality: Vec<f64>,
}

#[wasm_bindgen]
impl Blobs {
    #[wasm_bindgen(constructor)]
    pub fn new(k: u32, per: u32, spread: f64, seed: u32) -> Blobs {
        let (xy, quality) = blobs(k as usize, per as usize, spread, seed as u64);
        Blobs { xy, quality }
    }

    pub fn xy(&self) -> Vec<f64> {
        self.xy.clone()
    }

    pub fn quality(&self) -> Vec<f64> {
        self.quality.clone()
    }
}

#[wasm_bindgen(js_name = cluster)]
pub fn wasm_cluster(xy: &[f64], k: u32, seed: u32) -> Result<Vec<u32>, JsError> {
    cluster(xy, k as usize, seed as u64).map(to_u32).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = quotas)]
pub fn wasm_quotas(sizes: &[u32], alpha: u32) -> Result<Vec<u32>, JsError> {
    quotas(&to_usize(sizes), alpha as usize).map(to_u32).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = select)]
pub fn wasm_select(labels: &[u32], scores: &[f64], alpha: u32) -> Result<Vec<u32>, JsError> {
    select(&to_usize(labels), scores, alpha as usize).map(to_u32).map_err(|e| JsError::new(&e))
}
