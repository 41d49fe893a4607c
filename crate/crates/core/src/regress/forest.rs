//! Bagged regression trees.
//!
//! Trees split on squared-error reduction over every feature, with
//! thresholds at midpoints between consecutive distinct values. Each tree is
//! grown on a bootstrap sample of size `n` drawn from stream `tree_index` of
//! the forest seed, so trees can be built in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_MAX_DEPTH: usize = 5;
const MIN_SAMPLES_SPLIT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    sse: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn sse(ys: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| ys[i]).sum::<f64>() / n;
    let sse = rows.iter().map(|&i| (ys[i] - mean).powi(2)).sum();
    (mean, sse)
}

fn best_split(xs: &[Vec<f64>], ys: &[f64], rows: &[usize]) -> Option<BestSplit> {
    let dim = xs[rows[0]].len();
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = rows.iter().map(|&i| ys[i] * ys[i]).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted = rows.to_vec();
    for feature in 0..dim {
        sorted.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]));
        let (mut left_sum, mut left_sq) = (0.0, 0.0);
        for k in 0..n - 1 {
            let y = ys[sorted[k]];
            left_sum += y;
            left_sq += y * y;
            let (here, next) = (xs[sorted[k]][feature], xs[sorted[k + 1]][feature]);
            if here == next {
                continue;
            }
            let n_left = (k + 1) as f64;
            let n_right = (n - k - 1) as f64;
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let split_sse = (left_sq - left_sum * left_sum / n_left) + (right_sq - right_sum * right_sum / n_right);
            if best.is_none_or(|(_, _, s)| split_sse < s) {
                best = Some((feature, 0.5 * (here + next), split_sse));
            }
        }
    }
    let (feature, threshold, split_sse) = best?;
    let (left, right) = rows.iter().partition(|&&i| xs[i][feature] <= threshold);
    Some(BestSplit {
        feature,
        threshold,
        sse: split_sse,
        left,
        right,
    })
}

impl RegressionTree {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], rows: &[usize], max_depth: usize) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(xs, ys, rows.to_vec(), 0, max_depth);
        tree
    }

    fn grow(&mut self, xs: &[Vec<f64>], ys: &[f64], rows: Vec<usize>, depth: usize, max_depth: usize) -> usize {
        let id = self.nodes.len();
        let (mean, node_sse) = sse(ys, &rows);
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= max_depth || rows.len() < MIN_SAMPLES_SPLIT || node_sse <= 0.0 {
            return id;
        }
        let Some(split) = best_split(xs, ys, &rows) else {
            return id;
        };
        // Skip splits that only shuffle rounding error.
        if node_sse - split.sse <= 1e-12 * node_sse {
            return id;
        }
        let left = self.grow(xs, ys, split.left, depth + 1, max_depth);
        let right = self.grow(xs, ys, split.right, depth + 1, max_depth);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub max_depth: usize,
}

impl RandomForest {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], n_trees: usize, max_depth: usize, seed: u64) -> Self {
        let n = xs.len();
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::fit(xs, ys, &rows, max_depth)
            })
            .collect();
        Self { trees, max_depth }
    }

    /// Arithmetic mean of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let ys = xs
            .iter()
            .map(|x| if x[0] < 20.0 { 1.0 } else { 3.0 } + 0.1 * x[1])
            .collect();
        (xs, ys)
    }

    #[test]
    fn stump_finds_midpoint_threshold() {
        let xs = vec![vec![1.0], vec![2.0], vec![4.0], vec![5.0]];
        let ys = vec![0.0, 0.0, 1.0, 1.0];
        let tree = RegressionTree::fit(&xs, &ys, &[0, 1, 2, 3], 1);
        assert_eq!(
            tree.nodes[0],
            Node::Split {
                feature: 0,
                threshold: 3.0,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.predict(&[2.9]), 0.0);
        assert_eq!(tree.predict(&[3.1]), 1.0);
    }

    #[test]
    fn pure_or_constant_nodes_stay_leaves() {
        let xs = vec![vec![1.0], vec![1.0], vec![1.0]];
        let tree = RegressionTree::fit(&xs, &[0.0, 1.0, 2.0], &[0, 1, 2], 5);
        assert_eq!(tree.nodes.len(), 1);
        let tree = RegressionTree::fit(&[vec![1.0], vec![2.0]], &[4.0, 4.0], &[0, 1], 5);
        assert_eq!(tree.nodes, vec![Node::Leaf { value: 4.0 }]);
    }

    #[test]
    fn depth_and_leaf_bounds() {
        let (xs, ys) = grid();
        let rows: Vec<usize> = (0..xs.len()).collect();
        let tree = RegressionTree::fit(&xs, &ys, &rows, 5);
        assert!(tree.depth() <= 5);
        assert!(tree.leaf_values().len() <= 32);
        let leaves = tree.leaf_values();
        for x in &xs {
            assert!(leaves.contains(&tree.predict(x)));
        }
    }

    #[test]
    fn forest_is_seeded_and_averages_trees() {
        let (xs, ys) = grid();
        let a = RandomForest::fit(&xs, &ys, 20, 5, 42);
        let b = RandomForest::fit(&xs, &ys, 20, 5, 42);
        assert_eq!(a, b);
        assert_ne!(a, RandomForest::fit(&xs, &ys, 20, 5, 43));
        let probe = [13.5, 2.0];
        let mean = a.trees.iter().map(|t| t.predict(&probe)).sum::<f64>() / a.trees.len() as f64;
        assert_eq!(a.predict(&probe), mean);
        assert!(a.trees.iter().all(|t| t.depth() <= 5));
    }
}
