//! Meta-learners built on the boosting module.
//!
//! | kind | stage 1 | stage 2/3 |
//! |------|---------|-----------|
//! | T | μ̂₀, μ̂₁ per arm | τ̂ = μ̂₁ − μ̂₀ |
//! | X / Winsorized X | μ̂₀, μ̂₁ per arm | impute D̃¹, D̃⁰; fit τ̂₁, τ̂₀; blend |
//! | RX | as X, every fit with the γ-Welsch loss | inverse-variance blend |
//! | DR (clipped) | μ̂₀, μ̂₁, π̂ clipped to [0.01, 0.99] | regress the AIPW pseudo-outcome |

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::{fit_boosted, fit_logistic, BoostConfig, BoostedEnsemble, LogisticBooster};
use crate::data::{winsorize_outcomes, CausalDataset, FeatureMatrix};
use crate::error::{ensure, Error, Result};
use crate::loss::{mad_scale, LossKind, LossSpec, DEFAULT_GAMMA, SCALE_FLOOR};

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
pub const WINSOR_QUANTILES: (f64, f64) = (0.01, 0.99);
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    TLearner,
    XLearner,
    RxLearner,
    DrLearnerClipped,
    WinsorizedXLearner,
}

/// How τ̂₀ and τ̂₁ are blended: `τ̂ = g τ̂₀ + (1 − g) τ̂₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScheme {
    /// g(x) = π̂(x).
    PropensityWeight,
    /// g = σ̂₀⁻² / (σ̂₀⁻² + σ̂₁⁻²).
    InverseVariance,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySpec {
    KnownConstant(f64),
    /// The treated share of the fitting data (randomized designs).
    TreatedFraction,
    /// Boosted logistic model of W on X.
    Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaLearnerSpec {
    pub kind: LearnerKind,
    pub base_loss: LossSpec,
    pub stage3_loss: LossSpec,
    pub aggregation: AggregationScheme,
    pub boost_config: BoostConfig,
    pub propensity: PropensitySpec,
}

impl MetaLearnerSpec {
    fn with(kind: LearnerKind, loss: LossSpec, aggregation: AggregationScheme) -> Self {
        MetaLearnerSpec {
            kind,
            base_loss: loss,
            stage3_loss: loss,
            aggregation,
            boost_config: BoostConfig::default(),
            propensity: PropensitySpec::TreatedFraction,
        }
    }

    pub fn rx(gamma: f64) -> Self {
        Self::with(
            LearnerKind::RxLearner,
            LossSpec::gamma_welsch(gamma),
            AggregationScheme::InverseVariance,
        )
    }

    pub fn rx_default() -> Self {
        Self::rx(DEFAULT_GAMMA)
    }

    pub fn x_learner(loss: LossSpec) -> Self {
        Self::with(
            LearnerKind::XLearner,
            loss,
            AggregationScheme::PropensityWeight,
        )
    }

    pub fn x_mse() -> Self {
        Self::x_learner(LossSpec::squared())
    }

    pub fn x_huber() -> Self {
        Self::x_learner(LossSpec::huber())
    }

    pub fn winsorized_x() -> Self {
        Self::with(
            LearnerKind::WinsorizedXLearner,
            LossSpec::squared(),
            AggregationScheme::PropensityWeight,
        )
    }

    pub fn dr_clipped() -> Self {
        Self::with(
            LearnerKind::DrLearnerClipped,
            LossSpec::squared(),
            AggregationScheme::PropensityWeight,
        )
    }

    pub fn t_learner(loss: LossSpec) -> Self {
        Self::with(
            LearnerKind::TLearner,
            loss,
            AggregationScheme::PropensityWeight,
        )
    }

    pub fn with_boost(mut self, config: BoostConfig) -> Self {
        self.boost_config = config;
        self
    }

    pub fn with_aggregation(mut self, aggregation: AggregationScheme) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_propensity(mut self, propensity: PropensitySpec) -> Self {
        self.propensity = propensity;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == LearnerKind::RxLearner {
            let welsch = |l: &LossSpec| matches!(l.kind, LossKind::GammaWelsch { .. });
            if !welsch(&self.base_loss) || !welsch(&self.stage3_loss) {
                out.push("rx_learner requires gamma_welsch base and stage-3 losses".into());
            }
        }
        for (name, l) in [
            ("base_loss", &self.base_loss),
            ("stage3_loss", &self.stage3_loss),
        ] {
            if let Err(e) = l.validate() {
                out.push(format!("{name}: {e}"));
            }
        }
        if let AggregationScheme::Fixed(g) = self.aggregation {
            if !(0.0..=1.0).contains(&g) {
                out.push(format!(
                    "fixed aggregation weight must lie in [0, 1], got {g}"
                ));
            }
        }
        if let PropensitySpec::KnownConstant(p) = self.propensity {
            if !(p > 0.0 && p < 1.0) {
                out.push(format!("known propensity must lie in (0, 1), got {p}"));
            }
        }
        out.extend(self.boost_config.violations());
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityModel {
    Constant(f64),
    Boosted(LogisticBooster),
}

impl PropensityModel {
    /// π̂(x), clipped to [`PROPENSITY_CLIP`].
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let (lo, hi) = PROPENSITY_CLIP;
        Ok(match self {
            PropensityModel::Constant(p) => vec![p.clamp(lo, hi); features.rows()],
            PropensityModel::Boosted(m) => m
                .predict_proba(features)?
                .into_iter()
                .map(|p| p.clamp(lo, hi))
                .collect(),
        })
    }
}

pub fn fit_propensity(
    data: &CausalDataset,
    spec: PropensitySpec,
    config: &BoostConfig,
) -> Result<PropensityModel> {
    let n1 = data.n_treated();
    ensure!(
        n1 > 0 && n1 < data.len(),
        "propensity needs both arms present"
    );
    Ok(match spec {
        PropensitySpec::KnownConstant(p) => PropensityModel::Constant(p),
        PropensitySpec::TreatedFraction => PropensityModel::Constant(n1 as f64 / data.len() as f64),
        PropensitySpec::Fitted => {
            PropensityModel::Boosted(fit_logistic(&data.features, &data.treatment, config)?)
        }
    })
}

/// Precision proxies of the two CATE models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmVariance {
    pub control: f64,
    pub treated: f64,
}

impl ArmVariance {
    /// Inverse-variance weight on τ̂₀.
    pub fn control_weight(&self) -> f64 {
        let (p0, p1) = (1.0 / self.control, 1.0 / self.treated);
        p0 / (p0 + p1)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum EffectModel {
    Difference,
    CrossFit {
        tau0: BoostedEnsemble,
        tau1: BoostedEnsemble,
        arm_variance: ArmVariance,
    },
    PseudoOutcome {
        effect: BoostedEnsemble,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedCate {
    pub kind: LearnerKind,
    pub mu0: BoostedEnsemble,
    pub mu1: BoostedEnsemble,
    pub effect: EffectModel,
    pub propensity: PropensityModel,
    pub aggregation: AggregationScheme,
}

/// `D̃¹ = Y − μ̂₀(X)` on treated units and `D̃⁰ = μ̂₁(X) − Y` on control units,
/// each in dataset order.
pub fn impute_pseudo_outcomes(
    mu0: &BoostedEnsemble,
    mu1: &BoostedEnsemble,
    data: &CausalDataset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n1 = data.n_treated();
    ensure!(n1 > 0, "no treated units to impute");
    ensure!(n1 < data.len(), "no control units to impute");
    let cols = data.features.cols();
    for m in [mu0, mu1] {
        if m.n_features != cols {
            return Err(Error::Dimension {
                expected: m.n_features,
                got: cols,
            });
        }
    }
    let mut d1 = Vec::with_capacity(n1);
    let mut d0 = Vec::with_capacity(data.len() - n1);
    for i in 0..data.len() {
        let x = data.features.row(i);
        if data.treatment[i] {
            d1.push(data.outcome[i] - mu0.predict_row(x));
        } else {
            d0.push(mu1.predict_row(x) - data.outcome[i]);
        }
    }
    Ok((d1, d0))
}

/// `σ̂²_w = mad_scale(D̃ʷ − τ̂_w(X))² / n_w`, floored at ε_σ².
pub fn estimate_arm_variance(
    tau_w: &BoostedEnsemble,
    features: &FeatureMatrix,
    pseudo_outcomes: &[f64],
) -> Result<f64> {
    ensure!(
        pseudo_outcomes.len() == features.rows() && !pseudo_outcomes.is_empty(),
        "arm variance needs one pseudo-outcome per row"
    );
    let pred = tau_w.predict(features)?;
    let resid: Vec<f64> = pseudo_outcomes
        .iter()
        .zip(&pred)
        .map(|(d, p)| d - p)
        .collect();
    let s = mad_scale(&resid)?;
    Ok((s * s / pseudo_outcomes.len() as f64).max(SCALE_FLOOR * SCALE_FLOOR))
}

fn arm_data(data: &CausalDataset, treated: bool) -> (FeatureMatrix, Vec<f64>) {
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.treatment[i] == treated)
        .collect();
    let y = idx.iter().map(|&i| data.outcome[i]).collect();
    (data.features.select_rows(&idx), y)
}

fn fit_pair(
    a: (&FeatureMatrix, &[f64]),
    b: (&FeatureMatrix, &[f64]),
    loss: &LossSpec,
    config: &BoostConfig,
) -> Result<(BoostedEnsemble, BoostedEnsemble)> {
    let (ra, rb) = rayon::join(
        || fit_boosted(a.0, a.1, loss, config),
        || fit_boosted(b.0, b.1, loss, config),
    );
    Ok((ra?, rb?))
}

pub fn fit_meta(data: &CausalDataset, spec: &MetaLearnerSpec) -> Result<FittedCate> {
    spec.validate()?;
    data.validate()?;
    let data: Cow<CausalDataset> = if spec.kind == LearnerKind::WinsorizedXLearner {
        Cow::Owned(winsorize_outcomes(
            data,
            WINSOR_QUANTILES.0,
            WINSOR_QUANTILES.1,
        )?)
    } else {
        Cow::Borrowed(data)
    };
    let min = spec.boost_config.min_samples_leaf.max(1);
    let n1 = data.n_treated();
    let n0 = data.len() - n1;
    if n1 < min {
        return Err(Error::DegenerateArm {
            arm: "treated",
            n: n1,
            min,
        });
    }
    if n0 < min {
        return Err(Error::DegenerateArm {
            arm: "control",
            n: n0,
            min,
        });
    }

    let cfg = &spec.boost_config;
    let (x0, y0) = arm_data(&data, false);
    let (x1, y1) = arm_data(&data, true);
    let (mu0, mu1) = fit_pair((&x0, &y0), (&x1, &y1), &spec.base_loss, cfg)?;

    let needs_pi = spec.kind == LearnerKind::DrLearnerClipped
        || spec.aggregation == AggregationScheme::PropensityWeight;
    let propensity = if needs_pi || spec.propensity != PropensitySpec::Fitted {
        fit_propensity(&data, spec.propensity, cfg)?
    } else {
        PropensityModel::Constant(n1 as f64 / data.len() as f64)
    };

    let effect = match spec.kind {
        LearnerKind::TLearner => EffectModel::Difference,
        LearnerKind::XLearner | LearnerKind::RxLearner | LearnerKind::WinsorizedXLearner => {
            let (d1, d0) = impute_pseudo_outcomes(&mu0, &mu1, &data)?;
            let (tau0, tau1) = fit_pair((&x0, &d0), (&x1, &d1), &spec.stage3_loss, cfg)?;
            let arm_variance = ArmVariance {
                control: estimate_arm_variance(&tau0, &x0, &d0)?,
                treated: estimate_arm_variance(&tau1, &x1, &d1)?,
            };
            EffectModel::CrossFit {
                tau0,
                tau1,
                arm_variance,
            }
        }
        LearnerKind::DrLearnerClipped => {
            let pi = propensity.predict(&data.features)?;
            let m0 = mu0.predict(&data.features)?;
            let m1 = mu1.predict(&data.features)?;
            let phi: Vec<f64> = (0..data.len())
                .map(|i| {
                    let w = if data.treatment[i] { 1.0 } else { 0.0 };
                    let mw = if data.treatment[i] { m1[i] } else { m0[i] };
                    m1[i] - m0[i] + (w - pi[i]) / (pi[i] * (1.0 - pi[i])) * (data.outcome[i] - mw)
                })
                .collect();
            EffectModel::PseudoOutcome {
                effect: fit_boosted(&data.features, &phi, &spec.stage3_loss, cfg)?,
            }
        }
    };

    Ok(FittedCate {
        kind: spec.kind,
        mu0,
        mu1,
        effect,
        propensity,
        aggregation: spec.aggregation,
    })
}

impl FittedCate {
    /// Weight g(x) placed on τ̂₀ for each row; `None` when the learner does not blend.
    pub fn blend_weights(&self, features: &FeatureMatrix) -> Result<Option<Vec<f64>>> {
        let EffectModel::CrossFit { arm_variance, .. } = &self.effect else {
            return Ok(None);
        };
        Ok(Some(match self.aggregation {
            AggregationScheme::PropensityWeight => self.propensity.predict(features)?,
            AggregationScheme::InverseVariance => {
                vec![arm_variance.control_weight(); features.rows()]
            }
            AggregationScheme::Fixed(g) => vec![g; features.rows()],
        }))
    }

    pub fn n_features(&self) -> usize {
        self.mu0.n_features
    }
}

pub fn predict_cate(model: &FittedCate, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let m0 = model.mu0.predict(features)?;
    match &model.effect {
        EffectModel::Difference => {
            let m1 = model.mu1.predict(features)?;
            Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
        }
        EffectModel::PseudoOutcome { effect } => effect.predict(features),
        EffectModel::CrossFit { tau0, tau1, .. } => {
            let t0 = tau0.predict(features)?;
            let t1 = tau1.predict(features)?;
            let g = model.blend_weights(features)?.expect("cross-fit blends");
            Ok((0..features.rows())
                .map(|i| {
                    if g[i] == 1.0 {
                        t0[i]
                    } else if g[i] == 0.0 {
                        t1[i]
                    } else {
                        g[i] * t0[i] + (1.0 - g[i]) * t1[i]
                    }
                })
                .collect())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    kind: LearnerKind,
    aggregation: AggregationScheme,
    arm_variance: Option<ArmVariance>,
    propensity: PropensityModel,
    models: Vec<String>,
}

const BUNDLE_FORMAT: &str = "rxlearn-cate-bundle";

/// Write `manifest.json` plus one model file per fitted ensemble into `dir`.
pub fn save_bundle(model: &FittedCate, dir: impl AsRef<Path>) -> Result<()> {
    use crate::boosting::save_model;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![("mu0", &model.mu0), ("mu1", &model.mu1)];
    let mut arm_variance = None;
    match &model.effect {
        EffectModel::Difference => {}
        EffectModel::CrossFit {
            tau0,
            tau1,
            arm_variance: v,
        } => {
            files.push(("tau0", tau0));
            files.push(("tau1", tau1));
            arm_variance = Some(*v);
        }
        EffectModel::PseudoOutcome { effect } => files.push(("effect", effect)),
    }
    for (name, m) in &files {
        save_model(m, dir.join(format!("{name}.json")))?;
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        kind: model.kind,
        aggregation: model.aggregation,
        arm_variance,
        propensity: model.propensity.clone(),
        models: files.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::malformed(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<FittedCate> {
    use crate::boosting::load_model;
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(BUNDLE_FORMAT) {
        return Err(Error::malformed(&path, "not a CATE bundle manifest"));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != BUNDLE_VERSION as u64 {
        return Err(Error::SchemaVersion {
            what: "bundle",
            found: version as u32,
            expected: BUNDLE_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| Error::malformed(&path, e))?;
    let load = |name: &str| load_model(dir.join(format!("{name}.json")));
    let effect = match m.kind {
        LearnerKind::TLearner => EffectModel::Difference,
        LearnerKind::DrLearnerClipped => EffectModel::PseudoOutcome {
            effect: load("effect")?,
        },
        _ => EffectModel::CrossFit {
            tau0: load("tau0")?,
            tau1: load("tau1")?,
            arm_variance: m
                .arm_variance
                .ok_or_else(|| Error::malformed(&path, "cross-fit bundle without arm_variance"))?,
        },
    };
    Ok(FittedCate {
        kind: m.kind,
        mu0: load("mu0")?,
        mu1: load("mu1")?,
        effect,
        propensity: m.propensity,
        aggregation: m.aggregation,
    })
}
