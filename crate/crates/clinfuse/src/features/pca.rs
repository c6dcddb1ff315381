//! Principal component analysis of the fused feature matrix, fitted on
//! the train split only. Eigendecomposition is delegated to nalgebra;
//! centering, ordering, the deterministic sign convention, and the
//! explained-variance accounting live here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least {wanted} training rows for {wanted} components, got {rows}")]
    TooFewRows { rows: usize, wanted: usize },
    #[error("training matrix is empty")]
    EmptyMatrix,
    #[error("row has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PcaSelection {
    /// Smallest count whose explained-variance ratios sum to the target,
    /// capped at `max_components`.
    VarianceTarget { target: f64, max_components: usize },
    Fixed(usize),
}

/// Fitted PCA: train mean, orthonormal component rows in descending
/// eigenvalue order, and explained-variance ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCAModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    pub n_components: usize,
}

impl PCAModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Project one centered row onto the retained components.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>, PcaError> {
        if row.len() != self.mean.len() {
            return Err(PcaError::DimensionMismatch { got: row.len(), expected: self.mean.len() });
        }
        let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Map a reduced vector back to the original space (plus mean).
    pub fn reconstruct(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (coef, component) in reduced.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(component) {
                *o += coef * c;
            }
        }
        out
    }
}

/// Eigendecompose the train covariance. Rank-deficient inputs yield fewer
/// components than requested, with a warning.
pub fn fit_pca(matrix: &[Vec<f64>], selection: PcaSelection) -> Result<PCAModel, PcaError> {
    let rows = matrix.len();
    let Some(dim) = matrix.first().map(|r| r.len()) else {
        return Err(PcaError::EmptyMatrix);
    };
    if let PcaSelection::Fixed(k) = selection {
        if rows < k {
            return Err(PcaError::TooFewRows { rows, wanted: k });
        }
    }

    let mut mean = vec![0.0; dim];
    for row in matrix {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in matrix {
        let centered = DVector::from_iterator(dim, row.iter().zip(&mean).map(|(x, m)| x - m));
        cov.syger(1.0 / rows as f64, &centered, &centered, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();

    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].partial_cmp(&eigen.eigenvalues[a]).unwrap());

    let total_variance: f64 = eigen.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let rank_tol = 1e-12 * total_variance.max(1.0);

    let mut components = Vec::new();
    let mut ratios = Vec::new();
    for &i in &order {
        let value = eigen.eigenvalues[i].max(0.0);
        if value <= rank_tol {
            continue;
        }
        let mut component: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
        // Sign convention: the largest-magnitude entry is positive.
        let lead = component
            .iter()
            .cloned()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            for x in component.iter_mut() {
                *x = -*x;
            }
        }
        components.push(component);
        ratios.push(if total_variance > 0.0 { value / total_variance } else { 0.0 });
    }

    let keep = match selection {
        PcaSelection::Fixed(k) => {
            if components.len() < k {
                log::warn!(
                    "covariance rank {} below requested {k} components; keeping {}",
                    components.len(),
                    components.len()
                );
            }
            k.min(components.len())
        }
        PcaSelection::VarianceTarget { target, max_components } => {
            let mut acc = 0.0;
            let mut k = 0;
            for &r in &ratios {
                if acc >= target || k >= max_components {
                    break;
                }
                acc += r;
                k += 1;
            }
            k.max(1).min(components.len())
        }
    };
    components.truncate(keep);
    ratios.truncate(keep);

    Ok(PCAModel { mean, components, explained_variance_ratio: ratios, n_components: keep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_data() -> Vec<Vec<f64>> {
        (0..20).map(|i| vec![i as f64, i as f64]).collect()
    }

    #[test]
    fn points_on_a_line_need_one_component() {
        let model = fit_pca(&line_data(), PcaSelection::Fixed(2)).unwrap();
        // Second eigenvalue is numerically zero, so rank filtering keeps 1.
        assert_eq!(model.n_components, 1);
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        let c = &model.components[0];
        assert!((c[0] - c[1]).abs() < 1e-9, "direction should be the diagonal");
    }

    #[test]
    fn reconstruction_with_all_components_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> =
            (0..40).map(|_| (0..6).map(|_| rng.gen::<f64>() * 3.0).collect()).collect();
        let model = fit_pca(&data, PcaSelection::Fixed(6)).unwrap();
        assert_eq!(model.n_components, 6);
        for row in &data {
            let reduced = model.apply(row).unwrap();
            let back = model.reconstruct(&reduced);
            for (a, b) in row.iter().zip(&back) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn components_orthonormal_and_ratios_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let base: f64 = rng.gen::<f64>() * 4.0;
                vec![
                    base + rng.gen::<f64>() * 0.1,
                    -base + rng.gen::<f64>() * 0.4,
                    rng.gen::<f64>(),
                    rng.gen::<f64>() * 0.2,
                ]
            })
            .collect();
        let model = fit_pca(&data, PcaSelection::Fixed(4)).unwrap();
        for i in 0..model.n_components {
            for j in 0..model.n_components {
                let dot: f64 = model.components[i]
                    .iter()
                    .zip(&model.components[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-8, "({i},{j}) dot {dot}");
            }
        }
        for pair in model.explained_variance_ratio.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
        let sum: f64 = model.explained_variance_ratio.iter().sum();
        assert!(sum <= 1.0 + 1e-9);
    }

    #[test]
    fn row_order_does_not_change_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<Vec<f64>> =
            (0..50).map(|_| (0..5).map(|_| rng.gen::<f64>()).collect()).collect();
        let mut flipped = data.clone();
        flipped.reverse();
        let a = fit_pca(&data, PcaSelection::Fixed(3)).unwrap();
        let b = fit_pca(&flipped, PcaSelection::Fixed(3)).unwrap();
        for (ca, cb) in a.components.iter().zip(&b.components) {
            for (x, y) in ca.iter().zip(cb) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn variance_target_keeps_smallest_sufficient_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // One dominant direction plus faint noise.
        let data: Vec<Vec<f64>> = (0..80)
            .map(|_| {
                let s: f64 = rng.gen::<f64>() * 10.0;
                vec![s, s * 0.9, rng.gen::<f64>() * 0.05, rng.gen::<f64>() * 0.05]
            })
            .collect();
        let model = fit_pca(
            &data,
            PcaSelection::VarianceTarget { target: 0.95, max_components: 128 },
        )
        .unwrap();
        assert_eq!(model.n_components, 1, "ratios: {:?}", model.explained_variance_ratio);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = fit_pca(&line_data(), PcaSelection::Fixed(1)).unwrap();
        assert!(matches!(
            model.apply(&[1.0, 2.0, 3.0]),
            Err(PcaError::DimensionMismatch { got: 3, expected: 2 })
        ));
    }
}
