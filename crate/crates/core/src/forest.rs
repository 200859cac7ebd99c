//! Random forest of CART trees.
//!
//! Each tree is grown on a bootstrap sample drawn from a generator seeded by
//! `(seed, tree index)`. At every node a fresh random feature order is drawn
//! from a generator seeded by `(tree seed, node path)`, and the first
//! `max_features` non-constant features in that order are searched for the
//! threshold minimizing the weighted Gini impurity of the two children.
//! Because node randomness depends only on the node's position, a tree grown
//! with a larger `max_depth` refines the shallower tree rather than diverging
//! from it.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{seed, Dataset};
use crate::error::{Error, Result};
use crate::eval::{self, Scores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Candidate features examined at each split.
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
    /// Restrict each tree to one random subset of `max_features` features
    /// instead of redrawing candidates at every split.
    #[serde(default)]
    pub per_tree_features: bool,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 10,
            max_features: 6,
            max_depth: None,
            min_samples_split: 2,
            seed: 0,
            per_tree_features: false,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be at least 1".into()));
        }
        if self.max_features == 0 {
            return Err(Error::Config("max_features must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        /// 0-based column; rows with `x[feature] <= threshold` go left.
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        attack_fraction: f64,
        n_samples: usize,
    },
}

impl TreeNode {
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = self;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.leaf_for(x) {
            TreeNode::Leaf { attack_fraction, .. } => *attack_fraction,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

/// Gini impurity `1 - p0² - p1²`.
pub fn gini(n_attack: u64, n_normal: u64) -> Result<f64> {
    let total = n_attack + n_normal;
    if total == 0 {
        return Err(Error::Undefined("gini of an empty node"));
    }
    let p1 = n_attack as f64 / total as f64;
    let p0 = n_normal as f64 / total as f64;
    Ok(1.0 - p0 * p0 - p1 * p1)
}

/// `n · gini` for a node with `n` samples of which `a` are attacks.
fn weighted_gini(a: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let b = n - a;
    n - (a * a + b * b) / n
}

#[derive(Debug, Clone)]
pub struct TreeParams {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// When set, only these columns are ever split on.
    pub feature_subset: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted child impurity `n_left·gini_left + n_right·gini_right`.
    pub score: f64,
}

impl SplitChoice {
    fn beats(&self, other: &SplitChoice, tol: f64) -> bool {
        if self.score < other.score - tol {
            return true;
        }
        if self.score > other.score + tol {
            return false;
        }
        (self.feature, self.threshold) < (other.feature, other.threshold)
    }
}

/// Best threshold on one feature for the samples `idx`, or `None` when the
/// feature is constant there. Thresholds are midpoints between consecutive
/// distinct values; among equal scores the lowest threshold wins.
pub fn best_split_on_feature(data: &Dataset, idx: &[usize], feature: usize) -> Option<SplitChoice> {
    let mut pairs: Vec<(f64, u8)> = idx
        .iter()
        .map(|&i| (data.value(i, feature), data.labels()[i]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len() as f64;
    let total_attack = pairs.iter().filter(|p| p.1 == 1).count() as f64;
    let tol = 1e-12 * n.max(1.0);
    let mut best: Option<SplitChoice> = None;
    let mut left_attack = 0.0;
    for i in 0..pairs.len().saturating_sub(1) {
        left_attack += f64::from(pairs[i].1);
        let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
        if lo >= hi {
            continue;
        }
        let n_left = (i + 1) as f64;
        let score = weighted_gini(left_attack, n_left) + weighted_gini(total_attack - left_attack, n - n_left);
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        let choice = SplitChoice {
            feature,
            threshold,
            score,
        };
        if best.is_none_or(|b| choice.score < b.score - tol) {
            best = Some(choice);
        }
    }
    best
}

struct Grower<'a> {
    data: &'a Dataset,
    params: &'a TreeParams,
    tree_seed: u64,
    importances: Vec<f64>,
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize], n_attack: usize) -> TreeNode {
        TreeNode::Leaf {
            attack_fraction: n_attack as f64 / idx.len() as f64,
            n_samples: idx.len(),
        }
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, node_key: u64) -> TreeNode {
        let labels = self.data.labels();
        let n_attack = idx.iter().filter(|&&i| labels[i] == 1).count();
        let n = idx.len();
        if n < self.params.min_samples_split
            || n_attack == 0
            || n_attack == n
            || self.params.max_depth.is_some_and(|d| depth >= d)
        {
            return self.leaf(idx, n_attack);
        }

        let mut order: Vec<usize> = match &self.params.feature_subset {
            Some(subset) => subset.clone(),
            None => (0..self.data.n_features()).collect(),
        };
        let mut rng = seed::rng(seed::derive(self.tree_seed, &[node_key]));
        order.shuffle(&mut rng);

        let tol = 1e-12 * n as f64;
        let mut best: Option<SplitChoice> = None;
        let mut examined = 0;
        for feature in order {
            if examined >= self.params.max_features {
                break;
            }
            let Some(choice) = best_split_on_feature(self.data, idx, feature) else {
                continue;
            };
            examined += 1;
            if best.is_none_or(|b| choice.beats(&b, tol)) {
                best = Some(choice);
            }
        }
        let Some(split) = best else {
            return self.leaf(idx, n_attack);
        };

        let parent = weighted_gini(n_attack as f64, n as f64);
        self.importances[split.feature] += (parent - split.score).max(0.0);

        let data = self.data;
        let mid = partition(idx, |&i| data.value(i, split.feature) <= split.threshold);
        let (left_idx, right_idx) = idx.split_at_mut(mid);
        let left = self.grow(left_idx, depth + 1, seed::derive(node_key, &[0]));
        let right = self.grow(right_idx, depth + 1, seed::derive(node_key, &[1]));
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Stable in-place partition; returns the number of elements satisfying
/// `pred`, which end up first.
fn partition(idx: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|i| pred(i));
    let mid = yes.len();
    idx[..mid].copy_from_slice(&yes);
    idx[mid..].copy_from_slice(&no);
    mid
}

/// Grows one CART tree on `samples` (row indices, repeats allowed). Returns
/// the tree and its unnormalized per-feature impurity decrease.
pub fn grow_tree(data: &Dataset, samples: &[usize], params: &TreeParams, tree_seed: u64) -> Result<(TreeNode, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to grow a tree on"));
    }
    let mut grower = Grower {
        data,
        params,
        tree_seed,
        importances: vec![0.0; data.n_features()],
    };
    let mut idx = samples.to_vec();
    let root = grower.grow(&mut idx, 0, 1);
    Ok((root, grower.importances))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Mean decrease in impurity per feature, normalized to sum to 1 (all
    /// zero when no tree split).
    pub importances: Vec<f64>,
}

/// Row indices of the bootstrap sample for tree `tree_index`.
pub fn bootstrap_sample(n: usize, forest_seed: u64, tree_index: usize) -> Vec<usize> {
    let mut rng = seed::rng(seed::derive(forest_seed, &[0xB007, tree_index as u64]));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub fn train_forest(data: &Dataset, config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no rows to train a forest on"));
    }
    let n = data.len();
    let n_features = data.n_features();
    let max_features = config.max_features.min(n_features);

    let grown = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(config.seed, &[t as u64]);
            let samples = if config.bootstrap {
                bootstrap_sample(n, config.seed, t)
            } else {
                (0..n).collect()
            };
            let feature_subset = config.per_tree_features.then(|| {
                let mut all: Vec<usize> = (0..n_features).collect();
                all.shuffle(&mut seed::rng(seed::derive(tree_seed, &[0xFEA7])));
                all.truncate(max_features);
                all.sort_unstable();
                all
            });
            let params = TreeParams {
                max_features,
                max_depth: config.max_depth,
                min_samples_split: config.min_samples_split,
                feature_subset,
            };
            grow_tree(data, &samples, &params, tree_seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut importances = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (acc, v) in importances.iter_mut().zip(&imp) {
            *acc += v;
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        config: config.clone(),
        n_features,
        trees,
        importances,
    })
}

impl ForestModel {
    /// Mean leaf attack fraction over all trees.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.n_features() != self.n_features {
            return Err(Error::Contract(format!(
                "model expects {} features, data has {}",
                self.n_features,
                data.n_features()
            )));
        }
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| self.predict_proba(data.row(i)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub max_features: Vec<usize>,
}

impl ForestGrid {
    /// Varies only the number of trees around `base`.
    pub fn estimators(counts: &[usize], base: &ForestConfig) -> ForestGrid {
        ForestGrid {
            n_estimators: counts.to_vec(),
            max_depth: vec![base.max_depth],
            min_samples_split: vec![base.min_samples_split],
            max_features: vec![base.max_features],
        }
    }

    pub fn configs(&self, base: &ForestConfig) -> Vec<ForestConfig> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                for &min_samples_split in &self.min_samples_split {
                    for &max_features in &self.max_features {
                        out.push(ForestConfig {
                            n_estimators,
                            max_depth,
                            min_samples_split,
                            max_features,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: ForestConfig,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Sorted best first.
    pub rows: Vec<GridRow>,
}

impl GridSearchResult {
    pub fn best(&self) -> &ForestConfig {
        &self.rows[0].config
    }
}

/// Trains every grid point on one fixed train/test split and ranks them by
/// test F1. Ties go to fewer trees, then shallower depth limit.
pub fn grid_search_forest(
    data: &Dataset,
    grid: &ForestGrid,
    base: &ForestConfig,
    train_fraction: f64,
    split_seed: u64,
    threshold: f64,
) -> Result<GridSearchResult> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::Config("empty forest grid".into()));
    }
    let (train, test) = eval::split_train_test(data, train_fraction, split_seed)?;
    let mut rows = configs
        .into_par_iter()
        .map(|config| {
            let model = train_forest(&train, &config)?;
            let probas = model.predict_dataset(&test)?;
            let report = eval::compute_metrics(&probas, test.labels(), threshold)?;
            Ok(GridRow {
                config,
                scores: report.scores,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let depth_key = |d: Option<usize>| d.unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        b.scores
            .f1
            .total_cmp(&a.scores.f1)
            .then(a.config.n_estimators.cmp(&b.config.n_estimators))
            .then(depth_key(a.config.max_depth).cmp(&depth_key(b.config.max_depth)))
    });
    Ok(GridSearchResult { rows })
}
