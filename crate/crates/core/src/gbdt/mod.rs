//! Second-order gradient-boosted trees for binary classification.
//!
//! Logistic loss with a positive-class weight, exact greedy split search
//! with learned default directions for missing values, per-round row
//! subsampling and per-tree column subsampling, and early stopping on
//! validation average precision.

mod loss;
mod model_io;
mod split;
mod train;
mod tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use loss::{grad_hess, leaf_weight, logit, sigmoid, weighted_logloss, weighted_logloss_row, HESS_FLOOR};
pub use split::{best_split, midpoint, split_gain, Direction, GradPair, SplitCandidate, SplitParams};
pub use train::train;
pub use tree::{Tree, TreeNode};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub min_child_weight: f64,
    /// `None` means "compute #neg/#pos on the training split".
    pub scale_pos_weight: Option<f64>,
    pub early_stopping_rounds: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub base_score: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: 6,
            learning_rate: 0.05,
            n_estimators: 600,
            subsample: 0.9,
            colsample_bytree: 0.9,
            min_child_weight: 1.0,
            scale_pos_weight: None,
            early_stopping_rounds: 50,
            lambda: 1.0,
            gamma: 0.0,
            base_score: 0.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0,1], got {v}")))
            }
        };
        unit("learning_rate", self.learning_rate)?;
        unit("subsample", self.subsample)?;
        unit("colsample_bytree", self.colsample_bytree)?;
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.n_estimators < 1 || self.early_stopping_rounds < 1 {
            return Err(Error::Config("n_estimators and early_stopping_rounds must be at least 1".into()));
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return Err(Error::Config(format!("base_score must lie in (0,1), got {}", self.base_score)));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if let Some(w) = self.scale_pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("scale_pos_weight must be positive, got {w}")));
            }
        }
        Ok(())
    }

    pub fn split_params(&self) -> SplitParams {
        SplitParams {
            lambda: self.lambda,
            gamma: self.gamma,
            min_child_weight: self.min_child_weight,
        }
    }
}

/// Per-round training record.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub valid_auprc: Vec<f64>,
    /// Weighted training log-loss after each round, over all training rows.
    pub train_logloss: Vec<f64>,
    /// Sum of split gains in each round's tree.
    pub round_gain: Vec<f64>,
    pub best_round: usize,
    pub stopped_early: bool,
    /// Weighted training log-loss before the first tree.
    pub initial_logloss: f64,
    pub scale_pos_weight: f64,
}

/// A trained model. Prediction uses `trees[..=best_iteration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Training configuration with `scale_pos_weight` resolved.
    pub config: TrainConfig,
    pub registry: FeatureRegistry,
    pub trees: Vec<Tree>,
    pub best_iteration: usize,
    /// Seconds since the Unix epoch, supplied by the caller.
    pub trained_at_unix: u64,
}

impl Ensemble {
    /// An ensemble with no trees; predicts `base_score` everywhere.
    pub fn empty(config: TrainConfig, registry: FeatureRegistry) -> Self {
        Ensemble {
            config,
            registry,
            trees: Vec::new(),
            best_iteration: 0,
            trained_at_unix: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn base_score(&self) -> f64 {
        self.config.base_score
    }

    pub fn base_margin(&self) -> f64 {
        logit(self.config.base_score)
    }

    /// Trees used for prediction.
    pub fn active_trees(&self) -> &[Tree] {
        let n = (self.best_iteration + 1).min(self.trees.len());
        &self.trees[..n]
    }

    pub fn registry_fingerprint(&self) -> String {
        self.registry.fingerprint()
    }

    pub fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.registry.len() {
            return Err(Error::Contract(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.registry.len()
            )));
        }
        Ok(())
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.margin_unchecked(x))
    }

    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        let lr = self.learning_rate();
        let mut m = self.base_margin();
        for t in self.active_trees() {
            m += lr * t.predict(x);
        }
        m
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.predict_margin(x).map(sigmoid)
    }

    pub fn predict_proba_batch(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.cols() != self.registry.len() {
            return Err(Error::Contract(format!(
                "matrix has {} columns, model expects {}",
                m.cols(),
                self.registry.len()
            )));
        }
        Ok((0..m.rows())
            .into_par_iter()
            .map(|r| sigmoid(self.margin_unchecked(m.row(r))))
            .collect())
    }

    /// Hex SHA-256 prefix of the serialized model.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        model_io::write(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        model_io::read(text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ensemble::from_text(&text)
    }
}
