//! Random forest over Gini-minimizing axis-aligned trees. In balanced
//! mode each tree trains on all minority samples plus an equal-size
//! seeded undersample of the majority, which is what rescues sensitivity
//! on heavily imbalanced outcomes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_shapes, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features inspected per node; `None` means ceil(sqrt(d)).
    pub feature_subsample: Option<usize>,
    pub seed: u64,
    /// Balanced per-tree subsampling; `false` gives a plain bootstrap
    /// forest for contrast experiments.
    pub balanced: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            feature_subsample: None,
            seed: 0,
            balanced: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { p1: f64, n: u32 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

/// Per-tree record of the class counts it actually trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleMeta {
    pub minority: usize,
    pub majority: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    pub subsample: SubsampleMeta,
}

impl DecisionTree {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { p1, .. } => return *p1,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] < *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedForest {
    pub trees: Vec<DecisionTree>,
    pub config: ForestConfig,
    pub input_dim: usize,
}

impl BalancedForest {
    /// Arithmetic mean of the per-tree leaf class-1 fractions.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(row)).sum();
        sum / self.trees.len() as f64
    }
}

/// Gini impurity of a node: `1 - p0^2 - p1^2`.
pub fn gini(positives: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p1 = positives as f64 / total as f64;
    let p0 = 1.0 - p1;
    1.0 - p0 * p0 - p1 * p1
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    config: &'a ForestConfig,
    n_features: usize,
    sub_features: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn build(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let n = samples.len();
        let positives = samples.iter().filter(|&&i| self.labels[i] == 1).count();
        let parent_gini = gini(positives, n);

        let make_leaf = |nodes: &mut Vec<TreeNode>| -> u32 {
            nodes.push(TreeNode::Leaf { p1: positives as f64 / n as f64, n: n as u32 });
            (nodes.len() - 1) as u32
        };

        if depth >= self.config.max_depth
            || n < 2 * self.config.min_leaf
            || positives == 0
            || positives == n
        {
            return make_leaf(&mut self.nodes);
        }

        // Seeded feature subset per node, evaluated in ascending index
        // order so ties resolve to the lowest feature, lowest threshold.
        let mut features: Vec<usize> = (0..self.n_features).collect();
        if self.sub_features < self.n_features {
            features.shuffle(rng);
            features.truncate(self.sub_features);
            features.sort_unstable();
        }

        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, weighted gini)
        for &feature in &features {
            let mut values: Vec<(f64, u8)> =
                samples.iter().map(|&i| (self.rows[i][feature], self.labels[i])).collect();
            values.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_n = 0usize;
            let mut left_pos = 0usize;
            for split_at in 1..n {
                left_n += 1;
                left_pos += values[split_at - 1].1 as usize;
                if values[split_at].0 <= values[split_at - 1].0 {
                    continue; // no distinct threshold here
                }
                let right_n = n - left_n;
                if left_n < self.config.min_leaf || right_n < self.config.min_leaf {
                    continue;
                }
                let right_pos = positives - left_pos;
                let weighted = (left_n as f64 * gini(left_pos, left_n)
                    + right_n as f64 * gini(right_pos, right_n))
                    / n as f64;
                if weighted < best.map_or(parent_gini - 1e-12, |(_, _, g)| g - 1e-12) {
                    let threshold = 0.5 * (values[split_at - 1].0 + values[split_at].0);
                    best = Some((feature, threshold, weighted));
                }
            }
        }

        let Some((feature, threshold, _)) = best else {
            return make_leaf(&mut self.nodes);
        };
        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) =
            samples.into_iter().partition(|&i| self.rows[i][feature] < threshold);

        let at = self.nodes.len();
        self.nodes.push(TreeNode::Split { feature, threshold, left: 0, right: 0 });
        let left = self.build(left_samples, depth + 1, rng);
        let right = self.build(right_samples, depth + 1, rng);
        if let TreeNode::Split { left: l, right: r, .. } = &mut self.nodes[at] {
            *l = left;
            *r = right;
        }
        at as u32
    }
}

fn train_tree(
    rows: &[Vec<f64>],
    labels: &[u8],
    config: &ForestConfig,
    tree_seed: u64,
) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    let minority_label = if n_pos <= n_neg { 1u8 } else { 0 };

    let (samples, subsample) = if config.balanced {
        let minority: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == minority_label).collect();
        let mut majority: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] != minority_label).collect();
        majority.shuffle(&mut rng);
        majority.truncate(minority.len());
        let meta = SubsampleMeta { minority: minority.len(), majority: majority.len() };
        let mut samples = minority;
        samples.extend(majority);
        samples.sort_unstable();
        (samples, meta)
    } else {
        let samples: Vec<usize> =
            (0..labels.len()).map(|_| rng.gen_range(0..labels.len())).collect();
        let minority = samples.iter().filter(|&&i| labels[i] == minority_label).count();
        let meta = SubsampleMeta { minority, majority: samples.len() - minority };
        (samples, meta)
    };

    let n_features = rows[0].len();
    let sub_features = config
        .feature_subsample
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features);
    let mut builder =
        TreeBuilder { rows, labels, config, n_features, sub_features, nodes: Vec::new() };
    builder.build(samples, 0, &mut rng);
    DecisionTree { nodes: builder.nodes, subsample }
}

/// Train the forest; trees run in parallel with per-tree derived seeds,
/// so parallel and serial runs produce identical forests.
pub fn train_balanced_forest(
    rows: &[Vec<f64>],
    labels: &[u8],
    config: &ForestConfig,
) -> Result<BalancedForest, ModelError> {
    check_shapes(rows, labels)?;
    let trees: Vec<DecisionTree> = (0..config.n_trees)
        .into_par_iter()
        .map(|i| train_tree(rows, labels, config, config.seed ^ (i as u64)))
        .collect();
    Ok(BalancedForest { trees, config: config.clone(), input_dim: rows[0].len() })
}
