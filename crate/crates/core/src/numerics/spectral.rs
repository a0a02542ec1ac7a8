//! Normalised spectral clustering (Ng, Jordan & Weiss).
//!
//! Affinity `W_ij = exp(−‖x_i − x_j‖² / 2σ²)` with `σ` the median pairwise
//! distance and `W_ii = 0`. The `K` eigenvectors of the smallest eigenvalues
//! of `L = I − D^{-1/2} W D^{-1/2}` are the `K` largest of
//! `M = D^{-1/2} W D^{-1/2}`; their rows are unit-normalised and clustered
//! with k-means++.

use super::kmeans::{ClusterAssignment, KMeans};
use super::linalg::{squared_distance, top_eigenpairs, Matrix};
use crate::error::{Error, Result};

/// Spectral embedding: the row-normalised eigenvector matrix together with
/// the Laplacian eigenvalues it came from.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// N×K, rows of unit norm (rows of isolated vertices stay zero).
    pub rows: Matrix,
    /// Eigenvalues of `L`, ascending.
    pub laplacian_eigenvalues: Vec<f64>,
}

/// Median of all pairwise Euclidean distances `i < j`.
pub fn median_pairwise_distance(data: &Matrix) -> f64 {
    let n = data.rows();
    let mut d2 = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(squared_distance(data.row(i), data.row(j)));
        }
    }
    if d2.is_empty() {
        return 0.0;
    }
    let mid = d2.len() / 2;
    let (_, upper, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = upper.sqrt();
    if d2.len() % 2 == 1 {
        upper
    } else {
        let lower = d2[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper)
    }
}

/// Gaussian affinity with the median-distance bandwidth.
pub fn gaussian_affinity(data: &Matrix) -> Result<Matrix> {
    let n = data.rows();
    let sigma = median_pairwise_distance(data);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateAffinity);
    }
    let denom = 2.0 * sigma * sigma;
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (-squared_distance(data.row(i), data.row(j)) / denom).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// `D^{-1/2} W D^{-1/2}`; vertices of zero degree get zero rows.
pub fn normalized_affinity(affinity: &Matrix) -> Matrix {
    let n = affinity.rows();
    let inv_sqrt: Vec<f64> = affinity
        .iter_rows()
        .map(|r| {
            let deg: f64 = r.iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut m = affinity.clone();
    for i in 0..n {
        let si = inv_sqrt[i];
        for (j, v) in m.row_mut(i).iter_mut().enumerate() {
            *v *= si * inv_sqrt[j];
        }
    }
    m
}

pub fn spectral_embedding(affinity: &Matrix, k: usize, seed: u64) -> Result<SpectralEmbedding> {
    let n = affinity.rows();
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let m = normalized_affinity(affinity);
    let top = top_eigenpairs(&m, k, seed)?;
    let laplacian_eigenvalues = top.values.iter().map(|mu| 1.0 - mu).collect();
    let mut rows = top.vectors;
    for i in 0..n {
        let r = rows.row_mut(i);
        let len = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.0 {
            r.iter_mut().for_each(|x| *x /= len);
        }
    }
    Ok(SpectralEmbedding {
        rows,
        laplacian_eigenvalues,
    })
}

/// Clusters a precomputed symmetric affinity matrix.
pub fn spectral_cluster_affinity(affinity: &Matrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = affinity.rows();
    if k == 0 {
        return Err(Error::BadConfig("spectral clustering needs K >= 1".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    if k == 1 {
        return Ok(ClusterAssignment::from_labels(vec![Some(0); n], 1));
    }
    let emb = spectral_embedding(affinity, k, seed)?;
    let mut out = KMeans::new(k, seed).fit(&emb.rows)?;
    // Centroids live in the spectral space; callers only need labels.
    out.centroids = Matrix::zeros(0, 0);
    Ok(out)
}

/// Spectral clustering of the rows of `data` into `k` groups.
pub fn spectral_cluster(data: &Matrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = data.rows();
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let affinity = gaussian_affinity(data)?;
    spectral_cluster_affinity(&affinity, k, seed)
}
