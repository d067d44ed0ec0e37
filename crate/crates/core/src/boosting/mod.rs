//! Weighted regression trees and MM gradient boosting.
//!
//! Each round fits a tree to the current residuals with the loss's MM weights
//! as instance weights. The proposed step is kept only if the training loss
//! does not increase; otherwise it is halved (at most [`MAX_HALVINGS`] times)
//! and the round is dropped if no step descends.

mod ensemble;
mod logistic;
mod tree;

pub use ensemble::{fit_boosted, load_model, predict, save_model, BoostedEnsemble, MODEL_VERSION};
pub use logistic::{fit_logistic, LogisticBooster};
pub use tree::{fit_tree, fit_tree_presorted, Node, Presorted, RegressionTree, WEIGHT_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    pub n_rounds: usize,
    /// η
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum sum of instance weights in each child.
    pub min_child_weight: f64,
    pub min_samples_leaf: usize,
    /// Carried for reproducibility records; the fit itself uses no randomness.
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            out.push(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            out.push(format!(
                "min_child_weight must be >= 0, got {}",
                self.min_child_weight
            ));
        }
        if self.min_samples_leaf < 1 {
            out.push("min_samples_leaf must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v.join("; ")))
        }
    }
}
