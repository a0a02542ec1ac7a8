//! Principal component analysis via eigendecomposition of the sample
//! covariance matrix.

use serde::{Deserialize, Serialize};

use super::linalg::{symmetric_eigen, Matrix};
use crate::error::{Error, Result};

/// A fitted PCA projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// m×d, one principal direction per row.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component (sample covariance, N−1 denominator),
    /// nonincreasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// Projects one row: `(x − mean)·componentsᵀ`.
    pub fn transform_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(self.input_dim(), x.len(), "PCA input width"));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        let rows = data
            .iter_rows()
            .map(|r| self.transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.output_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Maps reduced coordinates back to the input space.
    pub fn inverse_transform_row(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim() {
            return Err(Error::dims(self.output_dim(), y.len(), "PCA reduced width"));
        }
        let mut x = self.mean.clone();
        for (c, &w) in self.components.iter().zip(y) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        Ok(x)
    }

    pub fn inverse_transform(&self, reduced: &Matrix) -> Result<Matrix> {
        let rows = reduced
            .iter_rows()
            .map(|r| self.inverse_transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Column means.
pub fn column_means(data: &Matrix) -> Vec<f64> {
    let n = data.rows() as f64;
    let mut mean = vec![0.0; data.cols()];
    for r in data.iter_rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Sample covariance (N−1 denominator) of the rows of `data`.
pub fn sample_covariance(data: &Matrix, mean: &[f64]) -> Matrix {
    let d = data.cols();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in data.iter_rows() {
        for ((c, x), m) in centered.iter_mut().zip(r).zip(mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (data.rows() - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Fits the top-`m` principal directions. Each component is signed so that
/// its largest-magnitude entry is positive (first such entry on ties).
/// Rank-deficient data yields trailing near-zero variances.
pub fn pca_fit(data: &Matrix, m: usize) -> Result<PcaModel> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(Error::BadRank { rank: m, max: 0 });
    }
    let max = (n - 1).min(d);
    if m == 0 || m > max {
        return Err(Error::BadRank { rank: m, max });
    }
    let mean = column_means(data);
    let cov = sample_covariance(data, &mean);
    let eig = symmetric_eigen(&cov)?;

    let mut components = Vec::with_capacity(m);
    let mut explained_variance = Vec::with_capacity(m);
    for j in 0..m {
        let src = d - 1 - j;
        let mut v = eig.vectors.column(src);
        let pivot = v
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.values[src]);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::dot;

    #[test]
    fn collinear_points_single_component_carries_everything() {
        let data =
            Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [4.0, 8.0, 12.0]]).unwrap();
        let model = pca_fit(&data, 1).unwrap();
        let cov = sample_covariance(&data, &model.mean);
        let total: f64 = (0..3).map(|i| cov[(i, i)]).sum();
        assert!((model.explained_variance[0] / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let data = Matrix::from_rows(&[[1.0, 0.5], [3.0, -1.0], [0.0, 2.0], [4.0, 4.0]]).unwrap();
        let model = pca_fit(&data, 2).unwrap();
        let z = model.transform_row(&model.mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn rank_bounds() {
        let data = Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(pca_fit(&data, 0), Err(Error::BadRank { .. })));
        assert!(matches!(pca_fit(&data, 3), Err(Error::BadRank { max: 2, .. })));
        assert!(pca_fit(&data, 2).is_ok());
    }

    #[test]
    fn dimension_mismatch_on_transform() {
        let data = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0], [0.0, 0.0]]).unwrap();
        let model = pca_fit(&data, 1).unwrap();
        assert!(matches!(
            model.transform_row(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn components_orthonormal_and_signed() {
        let data = Matrix::from_rows(&[
            [1.0, 0.2, -0.3, 4.0],
            [0.5, 1.2, 0.3, 2.0],
            [-1.0, 0.0, 1.3, 0.0],
            [2.0, -2.2, 0.1, 1.0],
            [0.0, 0.4, -0.8, -3.0],
        ])
        .unwrap();
        let model = pca_fit(&data, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let g = dot(&model.components[i], &model.components[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8);
            }
            let c = &model.components[i];
            let big = c.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
        assert!(model
            .explained_variance
            .windows(2)
            .all(|w| w[0] >= w[1]));
    }
}
