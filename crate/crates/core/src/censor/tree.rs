//! CART decision trees (gini impurity) and a bagged random forest.
//! Leaf values are benign-class fractions, so predictions are already
//! scores in [0, 1] with benign near 1.

use crate::rng::{indexed_stream, Rng};
use ndarray::Array2;
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features considered per split; None = all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 20, min_samples_split: 2, max_features: None }
    }
}

/// Flat node arrays; `feature < 0` marks a leaf.
#[derive(Debug, Clone, Default)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f32>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Benign fraction of the training samples in the node.
    pub value: Vec<f32>,
    /// Normalized impurity-decrease importances, one per input feature.
    pub importances: Vec<f64>,
}

fn gini(n_benign: usize, n_total: usize) -> f64 {
    if n_total == 0 {
        return 0.0;
    }
    let p = n_benign as f64 / n_total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Array2<f32>,
    y: &'a [u8],
    cfg: &'a TreeConfig,
    tree: Tree,
    raw_importance: Vec<f64>,
    n_total: usize,
    feat_scratch: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn push_node(&mut self) -> usize {
        let id = self.tree.feature.len();
        self.tree.feature.push(-1);
        self.tree.threshold.push(0.0);
        self.tree.left.push(0);
        self.tree.right.push(0);
        self.tree.value.push(0.0);
        id
    }

    /// Picks the split minimizing weighted child gini; ties keep the
    /// first candidate in feature order for determinism.
    fn best_split(
        &mut self,
        idx: &[usize],
        rng: &mut Option<&mut Rng>,
    ) -> Option<(usize, f32, f64)> {
        let n = idx.len();
        let d = self.x.ncols();
        let n_feats = match (self.cfg.max_features, rng.as_mut()) {
            (Some(m), Some(rng)) => {
                let m = m.min(d);
                for k in 0..m {
                    let j = rng.random_range(k..d);
                    self.feat_scratch.swap(k, j);
                }
                m
            }
            _ => {
                for (k, f) in self.feat_scratch.iter_mut().enumerate() {
                    *f = k;
                }
                d
            }
        };

        let mut best: Option<(usize, f32, f64)> = None;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for fi in 0..n_feats {
            let f = self.feat_scratch[fi];
            order.clear();
            order.extend_from_slice(idx);
            order.sort_by(|&a, &b| {
                self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b))
            });
            let total_benign = order.iter().filter(|&&i| self.y[i] == 1).count();
            let mut left_benign = 0usize;
            for k in 1..n {
                if self.y[order[k - 1]] == 1 {
                    left_benign += 1;
                }
                let (lo, hi) = (self.x[[order[k - 1], f]], self.x[[order[k], f]]);
                if lo == hi {
                    continue;
                }
                let score = (k as f64 * gini(left_benign, k)
                    + (n - k) as f64 * gini(total_benign - left_benign, n - k))
                    / n as f64;
                if best.map_or(true, |(_, _, s)| score < s - 1e-12) {
                    // Midpoint threshold; <= goes left.
                    best = Some((f, (lo + hi) * 0.5, score));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: &mut Vec<usize>, depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let id = self.push_node();
        let n = idx.len();
        let n_benign = idx.iter().filter(|&&i| self.y[i] == 1).count();
        self.tree.value[id] = n_benign as f32 / n as f32;

        let node_gini = gini(n_benign, n);
        if depth >= self.cfg.max_depth
            || n < self.cfg.min_samples_split
            || n_benign == 0
            || n_benign == n
        {
            return id;
        }
        let Some((f, thr, child_score)) = self.best_split(idx, rng) else {
            return id;
        };

        self.raw_importance[f] += n as f64 / self.n_total as f64 * (node_gini - child_score);

        let mut left_idx: Vec<usize> = Vec::new();
        let mut right_idx: Vec<usize> = Vec::new();
        for &i in idx.iter() {
            if self.x[[i, f]] <= thr {
                left_idx.push(i);
            } else {
                right_idx.push(i);
            }
        }
        idx.clear();
        idx.shrink_to_fit();

        self.tree.feature[id] = f as i32;
        self.tree.threshold[id] = thr;
        let l = self.build(&mut left_idx, depth + 1, rng);
        self.tree.left[id] = l as u32;
        let r = self.build(&mut right_idx, depth + 1, rng);
        self.tree.right[id] = r as u32;
        id
    }
}

impl Tree {
    /// Fits on rows of `x` with labels `y` (1 = benign, 0 = sensitive).
    /// `rng` is only consulted when `cfg.max_features` subsamples.
    pub fn fit(x: &Array2<f32>, y: &[u8], cfg: &TreeConfig, mut rng: Option<&mut Rng>) -> Tree {
        assert_eq!(x.nrows(), y.len());
        assert!(!y.is_empty());
        let d = x.ncols();
        let mut b = Builder {
            x,
            y,
            cfg,
            tree: Tree::default(),
            raw_importance: vec![0.0; d],
            n_total: y.len(),
            feat_scratch: (0..d).collect(),
        };
        let mut idx: Vec<usize> = (0..y.len()).collect();
        b.build(&mut idx, 0, &mut rng);
        let mut tree = b.tree;
        let sum: f64 = b.raw_importance.iter().sum();
        tree.importances = if sum > 0.0 {
            b.raw_importance.iter().map(|v| v / sum).collect()
        } else {
            b.raw_importance
        };
        tree
    }

    /// Benign-fraction score for one feature row.
    pub fn predict(&self, row: &[f32]) -> f32 {
        let mut id = 0usize;
        loop {
            let f = self.feature[id];
            if f < 0 {
                return self.value[id];
            }
            id = if row[f as usize] <= self.threshold[id] {
                self.left[id] as usize
            } else {
                self.right[id] as usize
            };
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            tree: TreeConfig {
                max_depth: 20,
                min_samples_split: 2,
                max_features: None, // filled from sqrt(d) at fit time
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub importances: Vec<f64>,
}

impl Forest {
    /// Bagged trees with sqrt-feature subsampling and soft voting.
    pub fn fit(x: &Array2<f32>, y: &[u8], cfg: &ForestConfig, seed: u64) -> Forest {
        let d = x.ncols();
        let n = y.len();
        let tree_cfg = TreeConfig {
            max_features: cfg
                .tree
                .max_features
                .or(Some(((d as f64).sqrt().round() as usize).max(1))),
            ..cfg.tree.clone()
        };
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut importances = vec![0.0f64; d];
        for t in 0..cfg.n_trees {
            let mut rng = indexed_stream(seed, "forest-tree", t as u64);
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut bx = Array2::zeros((n, d));
            let mut by = vec![0u8; n];
            for (k, &i) in boot.iter().enumerate() {
                bx.row_mut(k).assign(&x.row(i));
                by[k] = y[i];
            }
            let tree = Tree::fit(&bx, &by, &tree_cfg, Some(&mut rng));
            for (a, b) in importances.iter_mut().zip(&tree.importances) {
                *a += b;
            }
            trees.push(tree);
        }
        let sum: f64 = importances.iter().sum();
        if sum > 0.0 {
            for v in importances.iter_mut() {
                *v /= sum;
            }
        }
        Forest { trees, importances }
    }

    /// Mean of per-tree benign fractions.
    pub fn predict(&self, row: &[f32]) -> f32 {
        let s: f32 = self.trees.iter().map(|t| t.predict(row)).sum();
        s / self.trees.len() as f32
    }
}
