//! Brute-force reference implementations shared by test targets.
#![allow(dead_code)]

use readmit_core::features::{FeatureKind, FeatureMatrix, FeatureRegistry};
use readmit_core::gbdt::{train, weighted_logloss_row, Direction, TrainConfig, Tree, TreeNode};
use readmit_core::split::DatasetSplit;

/// O(n²) pair count with ties as one half.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Enumerates every distinct cut point, recomputing precision and recall
/// from scratch at each one.
pub fn auprc_enumerated(scores: &[f64], labels: &[u8]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for c in cuts {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= c && l == 1).count() as f64;
        let k = scores.iter().filter(|&&s| s >= c).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / k);
        prev_recall = recall;
    }
    ap
}

/// Central differences of the weighted log-loss in the margin.
pub fn numeric_grad_hess(margin: f64, label: u8, w: f64) -> (f64, f64) {
    let step = 1e-4;
    let f = |m: f64| weighted_logloss_row(m, label, w);
    let g = (f(margin + step) - f(margin - step)) / (2.0 * step);
    let h = (f(margin + step) - 2.0 * f(margin) + f(margin - step)) / (step * step);
    (g, h)
}

/// Naive exhaustive greedy tree: at each node every feature, every midpoint
/// of distinct present values, and both sides for missing rows.
pub struct Oracle<'a> {
    rows: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    lambda: f64,
    min_child: f64,
}

pub enum ONode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left_missing: bool,
        gain: f64,
        left: Box<ONode>,
        right: Box<ONode>,
    },
}

impl Oracle<'_> {
    fn sums(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.g[i], h + self.h[i]))
    }

    fn obj(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    pub fn build(&self, idx: &[usize], depth: usize) -> ONode {
        let (g, h) = self.sums(idx);
        let leaf = ONode::Leaf(-g / (h + self.lambda));
        if depth == 0 {
            return leaf;
        }
        let mut best: Option<(f64, usize, f64, bool)> = None;
        for f in 0..self.rows[0].len() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| self.rows[i][f]).filter(|v| !v.is_nan()).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                for left_missing in [true, false] {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| {
                        let v = self.rows[i][f];
                        if v.is_nan() {
                            left_missing
                        } else {
                            v < t
                        }
                    });
                    let (gl, hl) = self.sums(&l);
                    let (gr, hr) = self.sums(&r);
                    if hl < self.min_child || hr < self.min_child {
                        continue;
                    }
                    let gain = 0.5 * (self.obj(gl, hl) + self.obj(gr, hr) - self.obj(g, h));
                    if gain > best.map_or(0.0, |b| b.0) {
                        best = Some((gain, f, t, left_missing));
                    }
                }
            }
        }
        let Some((gain, feature, threshold, left_missing)) = best else {
            return leaf;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| {
            let v = self.rows[i][feature];
            if v.is_nan() {
                left_missing
            } else {
                v < threshold
            }
        });
        ONode::Split {
            feature,
            threshold,
            left_missing,
            gain,
            left: Box::new(self.build(&l, depth - 1)),
            right: Box::new(self.build(&r, depth - 1)),
        }
    }
}

fn flatten(n: &ONode, out: &mut Vec<ONode>) {
    match n {
        ONode::Leaf(w) => out.push(ONode::Leaf(*w)),
        ONode::Split {
            feature,
            threshold,
            left_missing,
            gain,
            left,
            right,
        } => {
            out.push(ONode::Split {
                feature: *feature,
                threshold: *threshold,
                left_missing: *left_missing,
                gain: *gain,
                left: Box::new(ONode::Leaf(0.0)),
                right: Box::new(ONode::Leaf(0.0)),
            });
            flatten(left, out);
            flatten(right, out);
        }
    }
}

/// Compares a trained tree node by node against the oracle's.
pub fn tree_matches(tree: &Tree, oracle: &ONode) -> Result<(), String> {
    let mut want = Vec::new();
    flatten(oracle, &mut want);
    if tree.nodes().len() != want.len() {
        return Err(format!("{} nodes, oracle has {}", tree.nodes().len(), want.len()));
    }
    for (i, (got, want)) in tree.nodes().iter().zip(&want).enumerate() {
        let ok = match (got, want) {
            (TreeNode::Leaf { weight, .. }, ONode::Leaf(w)) => (weight - w).abs() < 1e-12,
            (
                TreeNode::Split {
                    feature,
                    threshold,
                    default_direction,
                    gain,
                    ..
                },
                ONode::Split {
                    feature: f,
                    threshold: t,
                    left_missing,
                    gain: wg,
                    ..
                },
            ) => {
                feature == f
                    && threshold == t
                    && (*default_direction == Direction::Left) == *left_missing
                    && (gain - wg).abs() < 1e-12
            }
            _ => false,
        };
        if !ok {
            return Err(format!("node {i} differs"));
        }
    }
    Ok(())
}

pub fn exact_config(max_depth: usize) -> TrainConfig {
    TrainConfig {
        max_depth,
        n_estimators: 1,
        subsample: 1.0,
        colsample_bytree: 1.0,
        scale_pos_weight: Some(1.0),
        min_child_weight: 0.5,
        early_stopping_rounds: 1000,
        ..Default::default()
    }
}

/// Trains one tree on `rows` and checks it against exhaustive search.
/// Labels must contain both classes.
pub fn check_first_tree(rows: &[Vec<f64>], labels: &[u8], depth: usize) -> Result<(), String> {
    let n = rows.len();
    let f = rows[0].len();
    let mut all = rows.to_vec();
    // Two validation rows, one per class.
    all.push(vec![0.0; f]);
    all.push(vec![1.0; f]);
    let mut y = labels.to_vec();
    y.extend([0, 1]);
    let split = DatasetSplit {
        train_idx: (0..n).collect(),
        valid_idx: vec![n, n + 1],
        test_idx: vec![],
        seed: 0,
    };
    let registry = FeatureRegistry::from_parts(
        (0..f).map(|i| format!("f{i}")).collect(),
        vec![FeatureKind::Numeric; f],
    )
    .map_err(|e| e.to_string())?;
    let cfg = exact_config(depth);
    let m = FeatureMatrix::from_rows(&all).map_err(|e| e.to_string())?;
    let (ens, _) = train(&m, &y, &split, &cfg, &registry).map_err(|e| e.to_string())?;

    // At margin 0 with unit class weight: g = 0.5 - y, h = 0.25. Both are
    // dyadic, so every oracle sum is exact.
    let g: Vec<f64> = labels.iter().map(|&l| 0.5 - f64::from(l)).collect();
    let h = vec![0.25; n];
    let oracle = Oracle {
        rows,
        g: &g,
        h: &h,
        lambda: cfg.lambda,
        min_child: cfg.min_child_weight,
    };
    let idx: Vec<usize> = (0..n).collect();
    tree_matches(&ens.trees[0], &oracle.build(&idx, depth))
}
