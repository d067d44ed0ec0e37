use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit_tree_presorted, BoostConfig, Presorted, RegressionTree, MAX_HALVINGS};
use crate::data::FeatureMatrix;
use crate::error::{ensure, Error, Result};
use crate::loss::{gradient_and_weight, mad_scale, LossSpec, ScalePolicy};
use crate::stats::{mean, median};

pub const MODEL_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "rxlearn-boosted-ensemble";

/// Additive tree model `F(x) = F⁰ + Σ_t step_t · h_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub base_prediction: f64,
    pub trees: Vec<RegressionTree>,
    /// Accepted step size of each tree (η, possibly halved).
    pub step_sizes: Vec<f64>,
    /// Loss with the resolved scale anchor.
    pub loss_spec: LossSpec,
    /// Training loss at `F⁰`.
    pub initial_loss: f64,
    /// Training loss after each accepted round.
    pub loss_trace: Vec<f64>,
    pub skipped_rounds: usize,
    pub config: BoostConfig,
    pub n_features: usize,
}

impl BoostedEnsemble {
    pub fn constant(
        value: f64,
        n_features: usize,
        loss_spec: LossSpec,
        config: BoostConfig,
    ) -> Self {
        BoostedEnsemble {
            base_prediction: value,
            trees: Vec::new(),
            step_sizes: Vec::new(),
            loss_spec,
            initial_loss: 0.0,
            loss_trace: Vec::new(),
            skipped_rounds: 0,
            config,
            n_features,
        }
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut f = self.base_prediction;
        for (tree, step) in self.trees.iter().zip(&self.step_sizes) {
            f += step * tree.predict_row(x);
        }
        f
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: features.cols(),
            });
        }
        Ok((0..features.rows())
            .map(|i| self.predict_row(features.row(i)))
            .collect())
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(self.initial_loss)
    }
}

pub fn predict(model: &BoostedEnsemble, features: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(features)
}

fn residuals(targets: &[f64], f: &[f64]) -> Vec<f64> {
    targets.iter().zip(f).map(|(y, f)| y - f).collect()
}

/// MM gradient boosting.
///
/// `F⁰` is the median of the targets for robust losses and the mean for
/// squared error. Unless the loss carries [`ScalePolicy::Given`], σ̂ is the MAD
/// scale of `y - F⁰`. Each round fits a tree to the residuals with MM weights
/// and keeps the largest step in `η, η/2, ..., η/2⁸` that does not raise the
/// training loss.
pub fn fit_boosted(
    features: &FeatureMatrix,
    targets: &[f64],
    loss: &LossSpec,
    config: &BoostConfig,
) -> Result<BoostedEnsemble> {
    let n = features.rows();
    ensure!(!targets.is_empty(), "cannot boost on empty targets");
    ensure!(
        targets.len() == n,
        "targets has {} entries for {n} rows",
        targets.len()
    );
    ensure!(
        targets.iter().all(|t| t.is_finite()),
        "targets must be finite"
    );
    config.validate()?;

    let base_prediction = if loss.is_robust() {
        median(targets)
    } else {
        mean(targets)
    };
    let mut f = vec![base_prediction; n];
    let mut resid = residuals(targets, &f);
    let mut spec = *loss;
    if spec.scale_policy != ScalePolicy::Given {
        spec.scale = mad_scale(&resid)?;
    }
    spec.validate()?;

    let mut model = BoostedEnsemble::constant(base_prediction, features.cols(), spec, *config);
    let mut current = spec.total_loss(&resid);
    model.initial_loss = current;

    let mut tree_targets = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut candidate = vec![0.0; n];
    let presorted = Presorted::new(features);
    for round in 0..config.n_rounds {
        if let ScalePolicy::RefreshEvery(k) = spec.scale_policy {
            if round > 0 && round % k == 0 {
                spec.scale = mad_scale(&resid)?;
                current = spec.total_loss(&resid);
            }
        }
        for i in 0..n {
            let gw = gradient_and_weight(resid[i], &spec);
            weights[i] = gw.mm_weight;
            tree_targets[i] = resid[i];
        }
        if weights.iter().all(|&w| w <= 0.0) {
            weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let tree = fit_tree_presorted(&presorted, &tree_targets, &weights, config)?;
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = tree.predict_row(features.row(i));
        }

        let mut step = config.learning_rate;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..n {
                candidate[i] = f[i] + step * h[i];
            }
            let loss_val: f64 = targets
                .iter()
                .zip(&candidate)
                .map(|(y, c)| spec.point_loss(y - c))
                .sum();
            if loss_val <= current {
                accepted = Some(loss_val);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(loss_val) => {
                std::mem::swap(&mut f, &mut candidate);
                resid = residuals(targets, &f);
                current = loss_val;
                model.trees.push(tree);
                model.step_sizes.push(step);
                model.loss_trace.push(loss_val);
            }
            None => model.skipped_rounds += 1,
        }
    }
    model.loss_spec = spec;
    Ok(model)
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    model: &'a BoostedEnsemble,
}

#[derive(Deserialize)]
struct ModelFile {
    #[allow(dead_code)]
    format: String,
    #[serde(flatten)]
    model: BoostedEnsemble,
}

pub(crate) fn model_to_json(model: &BoostedEnsemble) -> Result<String> {
    serde_json::to_string_pretty(&ModelFileRef {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        model,
    })
    .map_err(|e| Error::Validation(format!("cannot serialize model: {e}")))
}

pub(crate) fn model_from_json(text: &str, path: &Path) -> Result<BoostedEnsemble> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::malformed(path, e))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(Error::malformed(path, "not a boosted ensemble model file"));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::malformed(path, "missing version"))?;
    if version != MODEL_VERSION as u64 {
        return Err(Error::SchemaVersion {
            what: "model",
            found: version as u32,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::malformed(path, e))?;
    let m = file.model;
    if m.trees.len() != m.step_sizes.len() {
        return Err(Error::malformed(
            path,
            "trees and step_sizes differ in length",
        ));
    }
    if !m.trees.iter().all(RegressionTree::is_well_formed) {
        return Err(Error::malformed(path, "malformed tree"));
    }
    Ok(m)
}

/// Versioned JSON; floats are written in shortest round-trip form.
pub fn save_model(model: &BoostedEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoostedEnsemble> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_1d_qualitative, FeatureMatrix};

    fn grid(n: usize) -> FeatureMatrix {
        FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn squared_error_converges_on_linear_target() {
        let x = grid(200);
        let y: Vec<f64> = (0..200).map(|i| 3.0 * x.get(i, 0) - 1.0).collect();
        let cfg = BoostConfig {
            n_rounds: 300,
            max_depth: 3,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let m = fit_boosted(&x, &y, &LossSpec::squared(), &cfg).unwrap();
        let p = m.predict(&x).unwrap();
        let rmse = (p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0).sqrt();
        let sd = crate::stats::sample_sd(&y);
        assert!(rmse < 0.05 * sd, "{rmse} vs {sd}");
    }

    #[test]
    fn empty_ensemble_predicts_base() {
        let m = BoostedEnsemble::constant(4.2, 2, LossSpec::squared(), BoostConfig::default());
        let x = FeatureMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![4.2; 3]);
        let bad = FeatureMatrix::new(3, 1, vec![0.0; 3]).unwrap();
        assert!(matches!(
            m.predict(&bad),
            Err(Error::Dimension {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn single_stump_is_two_level() {
        let x = grid(40);
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 2.0 }).collect();
        let cfg = BoostConfig {
            n_rounds: 1,
            max_depth: 1,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit_boosted(&x, &y, &LossSpec::squared(), &cfg).unwrap();
        let mut levels = m.predict(&x).unwrap();
        levels.dedup();
        assert_eq!(levels, vec![0.0, 2.0]);
    }

    #[test]
    fn training_predictions_reproduce_trace() {
        let d = generate_1d_qualitative(120, 4, 1).unwrap();
        for loss in [
            LossSpec::squared(),
            LossSpec::huber(),
            LossSpec::gamma_welsch(0.2),
        ] {
            let m = fit_boosted(&d.features, &d.outcome, &loss, &BoostConfig::default()).unwrap();
            let p = m.predict(&d.features).unwrap();
            let r: Vec<f64> = d.outcome.iter().zip(&p).map(|(y, f)| y - f).collect();
            assert_eq!(m.loss_spec.total_loss(&r), m.final_loss());
            assert_eq!(m.loss_trace.len(), m.trees.len());
            assert_eq!(m.loss_trace.len() + m.skipped_rounds, 200);
        }
    }

    #[test]
    fn welsch_trace_monotone_with_whales() {
        let d = generate_1d_qualitative(200, 5, 3).unwrap();
        let m = fit_boosted(
            &d.features,
            &d.outcome,
            &LossSpec::gamma_welsch(0.2),
            &BoostConfig::default(),
        )
        .unwrap();
        let mut prev = m.initial_loss;
        for &l in &m.loss_trace {
            assert!(l <= prev + 1e-9 * prev.abs());
            prev = l;
        }
    }

    #[test]
    fn anchor_is_mad_of_median_residuals() {
        let x = grid(5);
        let y = [1.0, 2.0, 3.0, 4.0, 100.0];
        let cfg = BoostConfig {
            n_rounds: 0,
            ..Default::default()
        };
        let m = fit_boosted(&x, &y, &LossSpec::gamma_welsch(0.2), &cfg).unwrap();
        assert_eq!(m.base_prediction, 3.0);
        assert!((m.loss_spec.scale - 1.4826).abs() < 1e-12);
        let m = fit_boosted(&x, &y, &LossSpec::squared(), &cfg).unwrap();
        assert_eq!(m.base_prediction, 22.0);
    }

    #[test]
    fn given_scale_is_kept() {
        let x = grid(30);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let mut loss = LossSpec::gamma_welsch(0.5).with_scale(3.0);
        loss.scale_policy = ScalePolicy::Given;
        let m = fit_boosted(&x, &y, &loss, &BoostConfig::default()).unwrap();
        assert_eq!(m.loss_spec.scale, 3.0);
    }

    #[test]
    fn refresh_policy_updates_scale() {
        let d = generate_1d_qualitative(100, 0, 2).unwrap();
        let mut loss = LossSpec::gamma_welsch(0.2);
        loss.scale_policy = ScalePolicy::RefreshEvery(10);
        let m = fit_boosted(&d.features, &d.outcome, &loss, &BoostConfig::default()).unwrap();
        let fixed = fit_boosted(
            &d.features,
            &d.outcome,
            &LossSpec::gamma_welsch(0.2),
            &BoostConfig::default(),
        )
        .unwrap();
        assert!(m.loss_spec.scale < fixed.loss_spec.scale);
    }

    #[test]
    fn rejects_non_finite_targets() {
        let x = grid(3);
        assert!(fit_boosted(
            &x,
            &[1.0, f64::NAN, 2.0],
            &LossSpec::squared(),
            &BoostConfig::default()
        )
        .is_err());
        assert!(fit_boosted(
            &x,
            &[1.0, 2.0],
            &LossSpec::squared(),
            &BoostConfig::default()
        )
        .is_err());
    }

    #[test]
    fn model_file_round_trip_and_version() {
        let d = generate_1d_qualitative(80, 3, 5).unwrap();
        let m = fit_boosted(
            &d.features,
            &d.outcome,
            &LossSpec::gamma_welsch(0.2),
            &BoostConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.predict(&d.features).unwrap(),
            m.predict(&d.features).unwrap()
        );

        let text =
            std::fs::read_to_string(&p)
                .unwrap()
                .replacen("\"version\": 1", "\"version\": 7", 1);
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            load_model(&p),
            Err(Error::SchemaVersion { found: 7, .. })
        ));

        std::fs::write(&p, "{ not json").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Malformed { .. })));
    }
}
