//! Principal component analysis by eigendecomposition of the sample
//! covariance (or of the Gram matrix when samples are fewer than dimensions).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes, one row per component.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Total variance of the fitted data (trace of the covariance).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|axis| axis.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (axis, &coef) in self.components.iter().zip(z) {
            for (o, a) in out.iter_mut().zip(axis) {
                *o += coef * a;
            }
        }
        out
    }
}

/// Fits `n_pca` components to `vectors` and projects them. No whitening.
/// Each component's largest-magnitude entry is made positive.
pub fn pca_fit_transform(vectors: &[Vec<f64>], n_pca: usize) -> Result<(PcaModel, Vec<Vec<f64>>)> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::invalid("PCA input", format!("needs at least 2 vectors, got {n}")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("PCA input vectors differ in length".into()));
    }
    let max = (n - 1).min(d);
    if n_pca == 0 || n_pca > max {
        return Err(Error::invalid(
            "n_pca",
            format!("{n_pca} components requested, at most {max} available from {n} vectors of length {d}"),
        ));
    }

    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (values, axes): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues.as_slice().to_vec());
        order
            .iter()
            .take(n_pca)
            .map(|&i| (eig.eigenvalues[i].max(0.0), eig.eigenvectors.column(i).iter().copied().collect()))
            .unzip()
    } else {
        // Eigenvectors u of X Xᵀ map to principal axes Xᵀu / ‖Xᵀu‖.
        let gram = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues.as_slice().to_vec());
        let mut values = Vec::with_capacity(n_pca);
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(n_pca);
        for &i in order.iter().take(n_pca) {
            let u = eig.eigenvectors.column(i);
            let axis = centered.transpose() * u;
            let norm = axis.norm();
            let lambda = eig.eigenvalues[i].max(0.0);
            if norm > 1e-12 * (1.0 + lambda.sqrt()) && lambda > 0.0 {
                values.push(lambda);
                axes.push(axis.iter().map(|a| a / norm).collect());
            } else {
                values.push(0.0);
                axes.push(complete_basis(&axes, d));
            }
        }
        (values, axes)
    };

    let components: Vec<Vec<f64>> = axes.into_iter().map(fix_sign).collect();
    let total_variance = (0..d).map(|j| centered.column(j).norm_squared()).sum::<f64>() / denom;
    let model = PcaModel {
        mean,
        components,
        explained_variance: values,
        total_variance,
    };
    let reduced = vectors.iter().map(|v| model.transform(v)).collect();
    Ok((model, reduced))
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn fix_sign(mut axis: Vec<f64>) -> Vec<f64> {
    let pivot = axis
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, &a)| if a.abs() > best.1.abs() { (i, a) } else { best })
        .1;
    if pivot < 0.0 {
        axis.iter_mut().for_each(|a| *a = -*a);
    }
    axis
}

/// A unit vector orthogonal to `basis`, by Gram-Schmidt over the standard
/// basis; used when the data span fewer directions than requested.
fn complete_basis(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    for j in 0..d {
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("fewer than d basis vectors always leave a free direction")
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn collinear_points_have_one_component() {
        let dir = [1.0, -2.0, 0.5, 3.0, 0.0];
        let pts: Vec<Vec<f64>> = (0..8).map(|t| dir.iter().map(|d| d * t as f64 + 1.0).collect()).collect();
        let (model, _) = pca_fit_transform(&pts, 1).unwrap();
        assert!((model.explained_variance_ratio()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_rank_reconstructs_inputs() {
        let pts = random_rows(12, 5, 4);
        let (model, reduced) = pca_fit_transform(&pts, 5).unwrap();
        for (p, z) in pts.iter().zip(&reduced) {
            for (a, b) in p.iter().zip(model.inverse_transform(z)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        // 6 samples in 10 dimensions goes through the Gram matrix.
        let pts = random_rows(6, 10, 8);
        let (model, reduced) = pca_fit_transform(&pts, 5).unwrap();
        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expect).abs() < 1e-6);
            }
        }
        // Projected variance along each axis equals its eigenvalue.
        for (c, &lambda) in model.explained_variance.iter().enumerate() {
            let var: f64 = reduced.iter().map(|z| z[c] * z[c]).sum::<f64>() / 5.0;
            assert!((var - lambda).abs() < 1e-9);
        }
        let (_, recon_ok) = pca_fit_transform(&pts, 5).unwrap();
        assert_eq!(recon_ok.len(), 6);
    }

    #[test]
    fn rank_deficient_gram_completes_basis() {
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0, 0.0, 0.0, 0.0, 0.0]).collect();
        let (model, _) = pca_fit_transform(&pts, 3).unwrap();
        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_too_many_components() {
        let pts = random_rows(4, 10, 1);
        assert!(pca_fit_transform(&pts, 4).is_err());
        assert!(pca_fit_transform(&pts, 0).is_err());
        assert!(pca_fit_transform(&pts[..1], 1).is_err());
    }

    #[test]
    fn sign_convention_and_ordering() {
        let pts = random_rows(30, 6, 12);
        let (model, reduced) = pca_fit_transform(&pts, 4).unwrap();
        for axis in &model.components {
            let max = axis.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
            assert!(max > 0.0);
        }
        assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let reduced_var: f64 = reduced.iter().map(|z| z.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / 29.0;
        assert!(reduced_var <= model.total_variance + 1e-12);
    }
}
