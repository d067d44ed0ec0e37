use serde::{Deserialize, Serialize};

use super::{fit_tree_presorted, BoostConfig, Presorted, RegressionTree};
use crate::data::FeatureMatrix;
use crate::error::{ensure, Error, Result};

const HESSIAN_FLOOR: f64 = 1e-6;

/// Boosted log-odds model for `P(W = 1 | X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticBooster {
    pub base_logit: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub n_features: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LogisticBooster {
    pub fn logit_row(&self, x: &[f64]) -> f64 {
        self.base_logit
            + self
                .trees
                .iter()
                .map(|t| self.learning_rate * t.predict_row(x))
                .sum::<f64>()
    }

    /// Unclipped probabilities.
    pub fn predict_proba(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: features.cols(),
            });
        }
        Ok((0..features.rows())
            .map(|i| sigmoid(self.logit_row(features.row(i))))
            .collect())
    }
}

/// Log-loss boosting: each round fits a squared-error tree to the Newton
/// direction `(w - p) / p(1 - p)` with weights `p(1 - p)`.
pub fn fit_logistic(
    features: &FeatureMatrix,
    labels: &[bool],
    config: &BoostConfig,
) -> Result<LogisticBooster> {
    let n = features.rows();
    ensure!(
        labels.len() == n,
        "labels has {} entries for {n} rows",
        labels.len()
    );
    config.validate()?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    ensure!(n_pos > 0 && n_pos < n, "logistic fit needs both classes");

    let rate = n_pos as f64 / n as f64;
    let base_logit = (rate / (1.0 - rate)).ln();
    let mut logits = vec![base_logit; n];
    let mut model = LogisticBooster {
        base_logit,
        trees: Vec::new(),
        learning_rate: config.learning_rate,
        n_features: features.cols(),
    };
    let mut targets = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let presorted = Presorted::new(features);
    for _ in 0..config.n_rounds {
        for i in 0..n {
            let p = sigmoid(logits[i]);
            let h = (p * (1.0 - p)).max(HESSIAN_FLOOR);
            let y = if labels[i] { 1.0 } else { 0.0 };
            targets[i] = (y - p) / h;
            hess[i] = h;
        }
        let tree = fit_tree_presorted(&presorted, &targets, &hess, config)?;
        for (i, z) in logits.iter_mut().enumerate() {
            *z += config.learning_rate * tree.predict_row(features.row(i));
        }
        model.trees.push(tree);
    }
    Ok(model)
}
