//! CART classification tree with Gini impurity.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Minimum impurity decrease for a split to be kept.
const MIN_DECREASE: f64 = 1e-12;

/// One training example: dense features and a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per node; `None` examines all of them.
    pub feature_subset_size: Option<usize>,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_leaf: 1,
            feature_subset_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<f64>,
    },
}

/// Nodes stored in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_classes: usize,
}

/// `1 - sum p_k^2` for the given class counts.
pub fn gini(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n).powi(2)).sum::<f64>()
}

fn class_counts(samples: &[Sample], idx: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_classes];
    for &i in idx {
        counts[samples[i].class] += 1.0;
    }
    counts
}

/// Every admissible threshold on `feature` for the rows in `idx` with the
/// size-weighted Gini impurity of the resulting children, ascending by threshold.
pub fn candidate_splits(
    samples: &[Sample],
    idx: &[usize],
    feature: usize,
    n_classes: usize,
    min_leaf: usize,
) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| (samples[i].features[feature], samples[i].class))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let total = class_counts(samples, idx, n_classes);
    let mut left = vec![0.0; n_classes];
    let mut out = Vec::new();
    for i in 0..n.saturating_sub(1) {
        left[sorted[i].1] += 1.0;
        let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
        if lo == hi {
            continue;
        }
        let n_left = i + 1;
        let n_right = n - n_left;
        if n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let weighted =
            (n_left as f64 * gini(&left) + n_right as f64 * gini(&right)) / n as f64;
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        out.push((threshold, weighted));
    }
    out
}

struct Builder<'a> {
    samples: &'a [Sample],
    n_classes: usize,
    n_features: usize,
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: Vec<f64>) -> usize {
        self.nodes.push(Node::Leaf { counts });
        self.nodes.len() - 1
    }

    fn features_for_node(&mut self) -> Vec<usize> {
        match self.params.feature_subset_size {
            Some(k) if k < self.n_features => {
                let mut picked = sample(&mut self.rng, self.n_features, k.max(1)).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = class_counts(self.samples, idx, self.n_classes);
        let impurity = gini(&counts);
        let depth_exhausted = self.params.max_depth.is_some_and(|d| depth >= d);
        let min_leaf = self.params.min_leaf.max(1);
        if impurity == 0.0 || depth_exhausted || idx.len() < 2 * min_leaf {
            return self.leaf(counts);
        }

        let mut best: Option<(usize, f64, f64)> = None;
        for feature in self.features_for_node() {
            for (threshold, weighted) in
                candidate_splits(self.samples, idx, feature, self.n_classes, min_leaf)
            {
                if best.is_none_or(|(_, _, b)| weighted < b) {
                    best = Some((feature, threshold, weighted));
                }
            }
        }
        let Some((feature, threshold, weighted)) = best else {
            return self.leaf(counts);
        };
        if impurity - weighted <= MIN_DECREASE {
            return self.leaf(counts);
        }

        let samples = self.samples;
        idx.sort_by_key(|&i| samples[i].features[feature] > threshold);
        let split_at = idx.partition_point(|&i| samples[i].features[feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: Vec::new() });
        let (left_idx, right_idx) = idx.split_at_mut(split_at);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

impl DecisionTree {
    /// Fits on `samples[idx]`; repeated indices act as sample weights.
    /// Panics if `idx` is empty.
    pub fn fit(samples: &[Sample], idx: &[usize], n_classes: usize, params: TreeParams) -> Self {
        assert!(!idx.is_empty(), "cannot fit a tree on zero rows");
        let n_features = samples[idx[0]].features.len();
        let mut builder = Builder {
            samples,
            n_classes,
            n_features,
            params,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            nodes: Vec::new(),
        };
        let mut idx = idx.to_vec();
        builder.build(&mut idx, 0);
        DecisionTree {
            nodes: builder.nodes,
            n_classes,
        }
    }

    pub fn fit_all(samples: &[Sample], n_classes: usize, params: TreeParams) -> Self {
        let idx: Vec<usize> = (0..samples.len()).collect();
        Self::fit(samples, &idx, n_classes, params)
    }

    fn leaf_counts(&self, x: &[f64]) -> &[f64] {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Class frequencies of the leaf `x` falls into.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf_counts(x);
        let n: f64 = counts.iter().sum();
        counts.iter().map(|c| c / n).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts } => Some(counts.as_slice()),
            Node::Split { .. } => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(features: &[f64], class: usize) -> Sample {
        Sample {
            features: features.to_vec(),
            class,
        }
    }

    #[test]
    fn pure_root_is_single_leaf() {
        let samples: Vec<_> = (0..5).map(|i| s(&[i as f64, 1.0], 2)).collect();
        let tree = DecisionTree::fit_all(&samples, 3, TreeParams::default());
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_proba(&[100.0, -3.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_feature_step_function() {
        // label = (hour >= 14) over hours 9..=19.
        let samples: Vec<_> = (9..=19).map(|h| s(&[h as f64], usize::from(h >= 14))).collect();
        let tree = DecisionTree::fit_all(&samples, 2, TreeParams::default());
        let Node::Split { feature, threshold, .. } = tree.nodes[0] else {
            panic!("root should split");
        };
        assert_eq!(feature, 0);
        // Exhaustive oracle: every threshold in (13, 14] separates perfectly,
        // and no threshold outside it does.
        assert!(threshold > 13.0 && threshold <= 14.0, "{threshold}");
        assert_eq!(tree.depth(), 1);
        for h in 9..=19 {
            let expected = usize::from(h >= 14);
            assert_eq!(tree.predict_proba(&[h as f64])[expected], 1.0);
        }
    }

    #[test]
    fn gini_matches_hand_computation() {
        // x: 1 2 3 4 5 6, y: 0 0 1 0 1 1
        let samples: Vec<_> = [(1.0, 0), (2.0, 0), (3.0, 1), (4.0, 0), (5.0, 1), (6.0, 1)]
            .iter()
            .map(|&(x, y)| s(&[x], y))
            .collect();
        let idx: Vec<usize> = (0..6).collect();
        let splits = candidate_splits(&samples, &idx, 0, 2, 1);
        // Hand computation, weighted Gini of each cut:
        // x<=1.5: L{0} R{0,1,0,1,1}: 5/6 * (1 - (2/5)^2 - (3/5)^2) = 5/6 * 12/25 = 0.4
        // x<=2.5: L{0,0} R{1,0,1,1}: 4/6 * (1 - 1/16 - 9/16) = 4/6 * 3/8 = 0.25
        // x<=3.5: L{0,0,1} R{0,1,1}: 2 * 3/6 * 4/9 = 4/9
        // x<=4.5: L{0,0,1,0} R{1,1}: 4/6 * 3/8 = 0.25
        // x<=5.5: L{0,0,1,0,1} R{1}: 5/6 * 12/25 = 0.4
        let expected = [
            (1.5, 0.4),
            (2.5, 0.25),
            (3.5, 4.0 / 9.0),
            (4.5, 0.25),
            (5.5, 0.4),
        ];
        assert_eq!(splits.len(), expected.len());
        for ((t, g), (et, eg)) in splits.iter().zip(expected) {
            assert_eq!(*t, et);
            assert!((g - eg).abs() < 1e-12, "{t}: {g} vs {eg}");
        }
        assert!((gini(&[3.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn respects_depth_and_min_leaf() {
        let samples: Vec<_> = (0..40).map(|i| s(&[i as f64], (i / 5) % 2)).collect();
        let shallow = DecisionTree::fit_all(&samples, 2, TreeParams { max_depth: Some(2), ..Default::default() });
        assert!(shallow.depth() <= 2);
        let coarse = DecisionTree::fit_all(&samples, 2, TreeParams { min_leaf: 8, ..Default::default() });
        assert!(coarse.leaves().all(|c| c.iter().sum::<f64>() >= 8.0));
        let full = DecisionTree::fit_all(&samples, 2, TreeParams::default());
        for smp in &samples {
            assert_eq!(full.predict_proba(&smp.features)[smp.class], 1.0);
        }
    }

    #[test]
    fn leaf_frequencies_equal_training_conditionals() {
        // Duplicate feature vectors with mixed labels cannot be separated,
        // so the leaf keeps their empirical label frequencies.
        let samples = vec![
            s(&[1.0], 0),
            s(&[1.0], 0),
            s(&[1.0], 1),
            s(&[2.0], 1),
            s(&[2.0], 2),
        ];
        let tree = DecisionTree::fit_all(&samples, 3, TreeParams::default());
        let p1 = tree.predict_proba(&[1.0]);
        assert_eq!(p1, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let p2 = tree.predict_proba(&[2.0]);
        assert_eq!(p2, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn feature_subsampling_is_seeded() {
        let samples: Vec<_> = (0..30)
            .map(|i| s(&[(i * 7 % 11) as f64, (i * 3 % 5) as f64, i as f64, (i % 2) as f64], i % 3))
            .collect();
        let params = TreeParams {
            feature_subset_size: Some(2),
            seed: 42,
            ..Default::default()
        };
        let a = DecisionTree::fit_all(&samples, 3, params);
        let b = DecisionTree::fit_all(&samples, 3, params);
        assert_eq!(a, b);
    }
}
