//! Bagged random forest and cross-validated hyperparameter selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, Sample, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub feature_subset_size: Option<usize>,
    pub bootstrap: bool,
}

impl ForestParams {
    /// Ordering used to break CV ties: shallower first, then fewer trees.
    fn simplicity_key(&self) -> (usize, usize) {
        (self.max_depth.unwrap_or(usize::MAX), self.n_trees)
    }
}

/// Default search space: 25 or 100 trees, depth 2, 4 or unlimited, one-row
/// leaves, `ceil(sqrt(d))` features per node, bootstrap on.
pub fn default_grid(n_features: usize) -> Vec<ForestParams> {
    let subset = (n_features as f64).sqrt().ceil() as usize;
    let mut grid = Vec::new();
    for n_trees in [25, 100] {
        for max_depth in [Some(2), Some(4), None] {
            grid.push(ForestParams {
                n_trees,
                max_depth,
                min_leaf: 1,
                feature_subset_size: Some(subset),
                bootstrap: true,
            });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
}

impl RandomForest {
    pub fn fit(samples: &[Sample], idx: &[usize], n_classes: usize, params: ForestParams, seed: u64) -> Self {
        assert!(params.n_trees > 0, "forest needs at least one tree");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let tree_seed: u64 = rng.gen();
                let rows: Vec<usize> = if params.bootstrap {
                    let mut boot = ChaCha8Rng::seed_from_u64(tree_seed ^ 0x9e37_79b9_7f4a_7c15);
                    (0..idx.len()).map(|_| idx[boot.gen_range(0..idx.len())]).collect()
                } else {
                    idx.to_vec()
                };
                DecisionTree::fit(
                    samples,
                    &rows,
                    n_classes,
                    TreeParams {
                        max_depth: params.max_depth,
                        min_leaf: params.min_leaf,
                        feature_subset_size: params.feature_subset_size,
                        seed: tree_seed,
                    },
                )
            })
            .collect();
        Self { trees, n_classes }
    }

    /// A one-leaf forest that always predicts `class`.
    pub fn constant(class: usize, n_classes: usize, weight: f64) -> Self {
        let mut counts = vec![0.0; n_classes];
        counts[class] = weight;
        Self {
            trees: vec![DecisionTree {
                nodes: vec![super::tree::Node::Leaf { counts }],
                n_classes,
            }],
            n_classes,
        }
    }

    /// Mean of the trees' leaf class frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict_proba(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

/// Index of the first maximal component.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Assigns each row to one of `k` folds. Classes are dealt round-robin
/// after shuffling when every class has at least `k` rows; otherwise the
/// whole set is shuffled and dealt.
pub fn assign_folds(classes: &[usize], n_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; classes.len()];
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in classes.iter().enumerate() {
        per_class[c].push(i);
    }
    let stratify = per_class.iter().all(|rows| rows.is_empty() || rows.len() >= k);
    if !stratify {
        log::debug!("a class has fewer than {k} rows; using unstratified folds");
        let mut all: Vec<usize> = (0..classes.len()).collect();
        all.shuffle(&mut rng);
        for (pos, i) in all.into_iter().enumerate() {
            fold[i] = pos % k;
        }
        return fold;
    }
    let mut next = 0;
    for rows in &mut per_class {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Mean held-out accuracy over `k` folds. Fewer than `k` rows falls back to
/// leave-one-out.
pub fn cross_val_accuracy(
    samples: &[Sample],
    n_classes: usize,
    params: ForestParams,
    k: usize,
    seed: u64,
) -> f64 {
    let k = if samples.len() < k {
        log::info!("{} rows < {k} folds; using leave-one-out", samples.len());
        samples.len()
    } else {
        k
    };
    let classes: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let folds = assign_folds(&classes, n_classes, k, seed);
    let mut total = 0.0;
    let mut used = 0;
    for f in 0..k {
        let train: Vec<usize> = (0..samples.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..samples.len()).filter(|&i| folds[i] == f).collect();
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let forest = RandomForest::fit(samples, &train, n_classes, params, seed.wrapping_add(f as u64 + 1));
        let correct = test
            .iter()
            .filter(|&&i| forest.predict(&samples[i].features) == samples[i].class)
            .count();
        total += correct as f64 / test.len() as f64;
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub params: ForestParams,
    pub cv_accuracy: f64,
    /// Mean accuracy for every grid entry, in grid order.
    pub scores: Vec<(ForestParams, f64)>,
}

/// Picks the grid entry with the best mean CV accuracy; ties go to the
/// shallower, then smaller, forest.
pub fn select_params(
    samples: &[Sample],
    n_classes: usize,
    grid: &[ForestParams],
    k: usize,
    seed: u64,
) -> Selection {
    assert!(!grid.is_empty(), "hyperparameter grid is empty");
    let scores: Vec<(ForestParams, f64)> = grid
        .iter()
        .map(|p| (*p, cross_val_accuracy(samples, n_classes, *p, k, seed)))
        .collect();
    let mut best = scores[0];
    for &(p, acc) in &scores[1..] {
        let better = acc > best.1 + 1e-12
            || ((acc - best.1).abs() <= 1e-12 && p.simplicity_key() < best.0.simplicity_key());
        if better {
            best = (p, acc);
        }
    }
    Selection {
        params: best.0,
        cv_accuracy: best.1,
        scores,
    }
}
