//! Global gain importance and per-instance path attributions.
//!
//! Path attributions are not Shapley values. Every node carries the
//! cover-weighted mean of the leaf weights below it; walking a row from the
//! root to its leaf, each step's change in node mean is credited to the
//! split feature. The steps telescope, so the base plus all contributions
//! equals the model margin.

use serde::Serialize;

use crate::error::Result;
use crate::gbdt::{Ensemble, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub gain: f64,
}

/// Total split gain per feature, descending. Features never split on are
/// absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceTable {
    pub rows: Vec<ImportanceRow>,
}

impl ImportanceTable {
    pub fn top(&self, k: usize) -> &[ImportanceRow] {
        &self.rows[..k.min(self.rows.len())]
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().map(|r| r.gain).sum()
    }
}

pub fn gain_importance(ens: &Ensemble) -> ImportanceTable {
    let mut totals = vec![0.0; ens.registry.len()];
    let mut used = vec![false; ens.registry.len()];
    for tree in ens.active_trees() {
        for node in tree.nodes() {
            if let TreeNode::Split { feature, gain, .. } = *node {
                totals[feature] += gain;
                used[feature] = true;
            }
        }
    }
    let mut rows: Vec<ImportanceRow> = (0..totals.len())
        .filter(|&f| used[f])
        .map(|f| ImportanceRow {
            feature: ens.registry.name(f).to_string(),
            gain: totals[f],
        })
        .collect();
    rows.sort_by(|a, b| b.gain.total_cmp(&a.gain).then_with(|| a.feature.cmp(&b.feature)));
    ImportanceTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub feature: String,
    /// Signed margin contribution.
    pub value: f64,
    /// 1-based position by |value| descending.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    /// Margin before any split is applied.
    pub base: f64,
    /// One entry per registry feature, ranked.
    pub contributions: Vec<Contribution>,
}

impl Attribution {
    pub fn margin(&self) -> f64 {
        self.base + self.contributions.iter().map(|c| c.value).sum::<f64>()
    }
}

fn rank(mut items: Vec<(String, f64)>) -> Vec<Contribution> {
    items.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    items
        .into_iter()
        .enumerate()
        .map(|(i, (feature, value))| Contribution {
            feature,
            value,
            rank: i + 1,
        })
        .collect()
}

pub fn path_contributions(ens: &Ensemble, x: &[f64]) -> Result<Attribution> {
    ens.check_len(x)?;
    let lr = ens.learning_rate();
    let mut base = ens.base_margin();
    let mut values = vec![0.0; ens.registry.len()];
    for tree in ens.active_trees() {
        let mut at = 0;
        base += lr * tree.node_mean(0);
        while let Some(next) = tree.step(at, x) {
            if let TreeNode::Split { feature, .. } = tree.nodes()[at] {
                values[feature] += lr * (tree.node_mean(next) - tree.node_mean(at));
            }
            at = next;
        }
    }
    let items = ens.registry.names().iter().cloned().zip(values).collect();
    Ok(Attribution {
        base,
        contributions: rank(items),
    })
}

/// The `k` largest contributions by magnitude, ties broken by name.
pub fn top_k(contribs: &[Contribution], k: usize) -> Vec<Contribution> {
    let items = contribs.iter().map(|c| (c.feature.clone(), c.value)).collect();
    let mut ranked = rank(items);
    ranked.truncate(k.max(1));
    ranked
}
