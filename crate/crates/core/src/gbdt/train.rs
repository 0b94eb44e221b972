use log::{debug, info};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{grad_hess, leaf_weight, logit, sigmoid, weighted_logloss};
use super::split::{Direction, GradPair, Scan, SplitCandidate, SplitParams};
use super::tree::{Tree, TreeNode};
use super::{Ensemble, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureRegistry};
use crate::metrics::auprc;
use crate::split::{class_weight, DatasetSplit};

const NO_SLOT: u32 = u32::MAX;

/// Training rows in column-major layout, with each feature's present rows
/// presorted by value.
struct Columns {
    values: Vec<Vec<f64>>,
    /// Row ids with a present value, ascending by (value, row).
    sorted_rows: Vec<Vec<u32>>,
    sorted_values: Vec<Vec<f64>>,
    missing_rows: Vec<Vec<u32>>,
}

impl Columns {
    fn build(matrix: &FeatureMatrix, rows: &[usize]) -> Self {
        let n_features = matrix.cols();
        let per_feature: Vec<_> = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let values: Vec<f64> = rows.iter().map(|&r| matrix.get(r, f)).collect();
                let mut present: Vec<u32> = Vec::with_capacity(values.len());
                let mut missing = Vec::new();
                for (i, v) in values.iter().enumerate() {
                    if v.is_nan() {
                        missing.push(i as u32);
                    } else {
                        present.push(i as u32);
                    }
                }
                present.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
                let sorted_values = present.iter().map(|&r| values[r as usize]).collect();
                (values, present, sorted_values, missing)
            })
            .collect();
        let mut c = Columns {
            values: Vec::with_capacity(n_features),
            sorted_rows: Vec::with_capacity(n_features),
            sorted_values: Vec::with_capacity(n_features),
            missing_rows: Vec::with_capacity(n_features),
        };
        for (v, p, s, m) in per_feature {
            c.values.push(v);
            c.sorted_rows.push(p);
            c.sorted_values.push(s);
            c.missing_rows.push(m);
        }
        c
    }
}

struct Active {
    id: usize,
    total: GradPair,
}

/// Grows one tree level by level. Every node at a level is split
/// independently, so the result equals depth-first greedy growth.
fn grow_tree(
    cols: &Columns,
    grad: &[f64],
    hess: &[f64],
    sampled_rows: &[u32],
    features: &[usize],
    max_depth: usize,
    params: &SplitParams,
) -> Tree {
    let n = grad.len();
    let mut slot_of_row = vec![NO_SLOT; n];
    let mut root = GradPair::default();
    for &r in sampled_rows {
        slot_of_row[r as usize] = 0;
        root.add(grad[r as usize], hess[r as usize]);
    }
    let mut nodes = vec![TreeNode::Leaf {
        weight: 0.0,
        cover: root.h,
    }];
    let mut active = vec![Active { id: 0, total: root }];
    let mut depth = 0;

    while !active.is_empty() {
        let best: Vec<Option<(usize, SplitCandidate)>> = if depth >= max_depth {
            vec![None; active.len()]
        } else {
            let totals: Vec<GradPair> = active.iter().map(|a| a.total).collect();
            let per_feature: Vec<Vec<Option<SplitCandidate>>> = features
                .par_iter()
                .map(|&f| scan_feature(cols, f, grad, hess, &slot_of_row, &totals, params))
                .collect();
            // Lowest feature index wins ties: features are ascending and only a
            // strictly larger gain replaces the incumbent.
            (0..active.len())
                .map(|s| {
                    let mut winner: Option<(usize, SplitCandidate)> = None;
                    for (k, &f) in features.iter().enumerate() {
                        if let Some(c) = per_feature[k][s] {
                            if winner.as_ref().map_or(true, |(_, w)| c.gain > w.gain) {
                                winner = Some((f, c));
                            }
                        }
                    }
                    winner
                })
                .collect()
        };

        // Lay out children and map each splitting slot to its child slots.
        let mut next: Vec<Active> = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32)>> = Vec::with_capacity(active.len());
        for (a, b) in active.iter().zip(&best) {
            match b {
                None => {
                    nodes[a.id] = TreeNode::Leaf {
                        weight: leaf_weight(a.total.g, a.total.h, params.lambda),
                        cover: a.total.h,
                    };
                    child_slots.push(None);
                }
                Some((feature, c)) => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(TreeNode::Leaf { weight: 0.0, cover: 0.0 });
                    nodes.push(TreeNode::Leaf { weight: 0.0, cover: 0.0 });
                    nodes[a.id] = TreeNode::Split {
                        feature: *feature,
                        threshold: c.threshold,
                        default_direction: c.default_direction,
                        left,
                        right,
                        gain: c.gain,
                        cover: a.total.h,
                    };
                    let ls = next.len() as u32;
                    next.push(Active {
                        id: left,
                        total: GradPair::default(),
                    });
                    next.push(Active {
                        id: right,
                        total: GradPair::default(),
                    });
                    child_slots.push(Some((ls, ls + 1)));
                }
            }
        }
        if next.is_empty() {
            break;
        }

        for r in 0..n {
            let s = slot_of_row[r];
            if s == NO_SLOT {
                continue;
            }
            slot_of_row[r] = match (child_slots[s as usize], &best[s as usize]) {
                (Some((ls, rs)), Some((feature, c))) => {
                    let v = cols.values[*feature][r];
                    let go_left = if v.is_nan() {
                        c.default_direction == Direction::Left
                    } else {
                        v < c.threshold
                    };
                    let child = if go_left { ls } else { rs };
                    next[child as usize].total.add(grad[r], hess[r]);
                    child
                }
                _ => NO_SLOT,
            };
        }
        for a in &next {
            if let TreeNode::Leaf { cover, .. } = &mut nodes[a.id] {
                *cover = a.total.h;
            }
        }
        active = next;
        depth += 1;
    }
    Tree::from_nodes(nodes, 0)
}

fn scan_feature(
    cols: &Columns,
    f: usize,
    grad: &[f64],
    hess: &[f64],
    slot_of_row: &[u32],
    totals: &[GradPair],
    params: &SplitParams,
) -> Vec<Option<SplitCandidate>> {
    let mut missing = vec![GradPair::default(); totals.len()];
    for &r in &cols.missing_rows[f] {
        let s = slot_of_row[r as usize];
        if s != NO_SLOT {
            missing[s as usize].add(grad[r as usize], hess[r as usize]);
        }
    }
    let mut scans: Vec<Scan> = (0..totals.len()).map(|_| Scan::new()).collect();
    for (&r, &v) in cols.sorted_rows[f].iter().zip(&cols.sorted_values[f]) {
        let s = slot_of_row[r as usize];
        if s == NO_SLOT {
            continue;
        }
        let s = s as usize;
        scans[s].push(v, grad[r as usize], hess[r as usize], totals[s], missing[s], params);
    }
    scans.into_iter().map(|s| s.best).collect()
}

fn sum_gain(tree: &Tree) -> f64 {
    tree.nodes()
        .iter()
        .map(|n| match n {
            TreeNode::Split { gain, .. } => *gain,
            TreeNode::Leaf { .. } => 0.0,
        })
        .sum()
}

fn check_inputs(matrix: &FeatureMatrix, labels: &[u8], split: &DatasetSplit, registry: &FeatureRegistry) -> Result<()> {
    if matrix.cols() != registry.len() {
        return Err(Error::Contract(format!(
            "matrix has {} columns but the registry lists {} features",
            matrix.cols(),
            registry.len()
        )));
    }
    if labels.len() != matrix.rows() {
        return Err(Error::Contract(format!(
            "{} labels for {} matrix rows",
            labels.len(),
            matrix.rows()
        )));
    }
    let max = split
        .train_idx
        .iter()
        .chain(&split.valid_idx)
        .chain(&split.test_idx)
        .max()
        .copied();
    if max.is_some_and(|m| m >= matrix.rows()) {
        return Err(Error::Contract("split refers to rows beyond the matrix".into()));
    }
    if matrix.rows() > u32::MAX as usize {
        return Err(Error::Contract("too many rows".into()));
    }
    Ok(())
}

/// Fits an ensemble on `split.train_idx`, early-stopping on validation
/// average precision over `split.valid_idx`.
pub fn train(
    matrix: &FeatureMatrix,
    labels: &[u8],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    registry: &FeatureRegistry,
) -> Result<(Ensemble, TrainHistory)> {
    cfg.validate()?;
    check_inputs(matrix, labels, split, registry)?;

    let train_labels: Vec<u8> = split.train_idx.iter().map(|&i| labels[i]).collect();
    let valid_labels: Vec<u8> = split.valid_idx.iter().map(|&i| labels[i]).collect();
    let train_pos = train_labels.iter().filter(|&&l| l == 1).count();
    if train_pos == 0 || train_pos == train_labels.len() {
        return Err(Error::Training("training split must contain both classes".into()));
    }
    if !valid_labels.contains(&1) {
        return Err(Error::Training(
            "validation split has no positives; average precision is undefined".into(),
        ));
    }
    let pos_weight = match cfg.scale_pos_weight {
        Some(w) => w,
        None => class_weight(&train_labels)?,
    };
    let mut resolved = cfg.clone();
    resolved.scale_pos_weight = Some(pos_weight);

    let cols = Columns::build(matrix, &split.train_idx);
    let n_train = split.train_idx.len();
    let n_features = matrix.cols();
    let params = cfg.split_params();
    let lr = cfg.learning_rate;
    let base = logit(cfg.base_score);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_margin = vec![base; n_train];
    let mut valid_margin = vec![base; split.valid_idx.len()];
    let mut grad = vec![0.0; n_train];
    let mut hess = vec![0.0; n_train];
    let all_rows: Vec<u32> = (0..n_train as u32).collect();
    let all_features: Vec<usize> = (0..n_features).collect();

    let mut history = TrainHistory {
        initial_logloss: weighted_logloss(&train_margin, &train_labels, pos_weight),
        scale_pos_weight: pos_weight,
        ..Default::default()
    };
    let mut trees = Vec::new();
    let mut best_score = f64::NEG_INFINITY;

    for round in 0..cfg.n_estimators {
        let rows: Vec<u32> = if cfg.subsample < 1.0 {
            let k = ((n_train as f64 * cfg.subsample).round() as usize).clamp(1, n_train);
            let mut v: Vec<u32> = index::sample(&mut rng, n_train, k).into_iter().map(|i| i as u32).collect();
            v.sort_unstable();
            v
        } else {
            all_rows.clone()
        };
        let features: Vec<usize> = if cfg.colsample_bytree < 1.0 {
            let k = ((n_features as f64 * cfg.colsample_bytree).round() as usize).clamp(1, n_features);
            let mut v = index::sample(&mut rng, n_features, k).into_vec();
            v.sort_unstable();
            v
        } else {
            all_features.clone()
        };

        for &r in &rows {
            let r = r as usize;
            let (g, h) = grad_hess(train_margin[r], train_labels[r], pos_weight);
            grad[r] = g;
            hess[r] = h;
        }
        let tree = grow_tree(&cols, &grad, &hess, &rows, &features, cfg.max_depth, &params);

        for (m, &i) in train_margin.iter_mut().zip(&split.train_idx) {
            *m += lr * tree.predict(matrix.row(i));
        }
        for (m, &i) in valid_margin.iter_mut().zip(&split.valid_idx) {
            *m += lr * tree.predict(matrix.row(i));
        }
        let valid_proba: Vec<f64> = valid_margin.iter().map(|&m| sigmoid(m)).collect();
        let score = auprc(&valid_proba, &valid_labels)?;
        history.valid_auprc.push(score);
        history.train_logloss.push(weighted_logloss(&train_margin, &train_labels, pos_weight));
        history.round_gain.push(sum_gain(&tree));
        trees.push(tree);
        debug!("round {round}: valid auprc {score:.6}");

        if score > best_score {
            best_score = score;
            history.best_round = round;
        } else if round - history.best_round >= cfg.early_stopping_rounds {
            history.stopped_early = true;
            break;
        }
    }
    info!(
        "trained {} trees, best round {} (valid auprc {:.4})",
        trees.len(),
        history.best_round,
        best_score
    );

    let ensemble = Ensemble {
        config: resolved,
        registry: registry.clone(),
        trees,
        best_iteration: history.best_round,
        trained_at_unix: 0,
    };
    Ok((ensemble, history))
}
