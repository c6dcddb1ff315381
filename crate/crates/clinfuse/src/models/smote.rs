//! Synthetic minority oversampling: new minority points interpolated
//! between a minority sample and one of its k nearest minority neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Desired minority:majority ratio after augmentation, in (0, 1].
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k_neighbors: 5, target_ratio: 1.0, seed: 0 }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Augment the minority class up to the target ratio. Originals are kept
/// verbatim; each synthetic row is `x_i + u * (x_nn - x_i)` with
/// `u ~ Uniform(0,1)` from the seeded stream and `x_nn` one of the `k`
/// nearest minority neighbors of `x_i`.
pub fn smote(
    rows: &[Vec<f64>],
    labels: &[u8],
    config: &SmoteConfig,
) -> Result<(Vec<Vec<f64>>, Vec<u8>), ModelError> {
    super::check_shapes(rows, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    let (minority_label, n_min, n_maj) =
        if n_pos <= n_neg { (1u8, n_pos, n_neg) } else { (0u8, n_neg, n_pos) };

    if n_min < config.k_neighbors + 1 {
        return Err(ModelError::TooFewMinority {
            have: n_min,
            need: config.k_neighbors + 1,
        });
    }

    let target_minority = (config.target_ratio * n_maj as f64).round() as usize;
    let n_synthetic = target_minority.saturating_sub(n_min);

    let minority: Vec<&Vec<f64>> = rows
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == minority_label)
        .map(|(r, _)| r)
        .collect();

    // k nearest minority neighbors per minority sample, self excluded.
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut scored: Vec<(usize, f64)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| (j, squared_distance(minority[i], minority[j])))
                .collect();
            scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            scored.into_iter().take(config.k_neighbors).map(|(j, _)| j).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out_rows = rows.to_vec();
    let mut out_labels = labels.to_vec();
    for _ in 0..n_synthetic {
        let i = rng.gen_range(0..minority.len());
        let nn = neighbors[i][rng.gen_range(0..neighbors[i].len())];
        let u: f64 = rng.gen();
        let synthetic: Vec<f64> = minority[i]
            .iter()
            .zip(minority[nn])
            .map(|(a, b)| a + u * (b - a))
            .collect();
        out_rows.push(synthetic);
        out_labels.push(minority_label);
    }
    Ok((out_rows, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetics_lie_on_segment_between_two_minority_points() {
        let a = vec![0.0, 0.0];
        let b = vec![2.0, 4.0];
        let mut rows = vec![a.clone(), b.clone()];
        let mut labels = vec![1u8, 1];
        for i in 0..20 {
            rows.push(vec![10.0 + i as f64, -3.0]);
            labels.push(0);
        }
        let config = SmoteConfig { k_neighbors: 1, target_ratio: 0.5, seed: 7 };
        let (aug_rows, aug_labels) = smote(&rows, &labels, &config).unwrap();
        for (row, &label) in aug_rows.iter().zip(&aug_labels).skip(rows.len()) {
            assert_eq!(label, 1);
            // Convex combination of a and b: residual from the segment
            // must vanish.
            let t = (row[0] - a[0]) / (b[0] - a[0]);
            assert!((-1e-9..=1.0 + 1e-9).contains(&t));
            let expect_y = a[1] + t * (b[1] - a[1]);
            assert!((row[1] - expect_y).abs() <= 1e-9);
        }
    }

    #[test]
    fn target_at_current_ratio_adds_nothing() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            rows.push(vec![i as f64]);
            labels.push(u8::from(i < 5));
        }
        let config = SmoteConfig { k_neighbors: 2, target_ratio: 1.0, seed: 1 };
        let (aug_rows, _) = smote(&rows, &labels, &config).unwrap();
        assert_eq!(aug_rows.len(), rows.len());
    }

    #[test]
    fn synthetic_count_matches_arithmetic() {
        // 100 majority, 5 minority, target 0.5 -> 45 synthetics.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            rows.push(vec![i as f64, 0.0]);
            labels.push(0);
        }
        for i in 0..5 {
            rows.push(vec![i as f64, 100.0]);
            labels.push(1);
        }
        let config = SmoteConfig { k_neighbors: 2, target_ratio: 0.5, seed: 3 };
        let (aug_rows, aug_labels) = smote(&rows, &labels, &config).unwrap();
        let expected = (0.5f64 * 100.0).round() as usize - 5;
        assert_eq!(expected, 45);
        assert_eq!(aug_rows.len(), 105 + expected);
        let minority_now = aug_labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(minority_now, 50);
    }

    #[test]
    fn too_few_minority_is_an_error() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![1, 0, 0, 0];
        let config = SmoteConfig { k_neighbors: 1, target_ratio: 1.0, seed: 0 };
        assert!(matches!(
            smote(&rows, &labels, &config),
            Err(ModelError::TooFewMinority { have: 1, need: 2 })
        ));
    }

    #[test]
    fn originals_are_preserved_and_seeded_runs_agree() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            rows.push(vec![i as f64, (i * i) as f64 % 7.0]);
            labels.push(u8::from(i % 6 == 0));
        }
        let config = SmoteConfig { k_neighbors: 2, target_ratio: 0.8, seed: 11 };
        let (a_rows, a_labels) = smote(&rows, &labels, &config).unwrap();
        let (b_rows, b_labels) = smote(&rows, &labels, &config).unwrap();
        assert_eq!(a_rows, b_rows);
        assert_eq!(a_labels, b_labels);
        assert_eq!(&a_rows[..rows.len()], &rows[..]);
    }
}
