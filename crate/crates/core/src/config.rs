//! Versioned TOML run configuration and the shipped presets.
//!
//! ```toml
//! version = 1
//! name = "example"
//! trials = 5
//!
//! [scenario]
//! n = 2000
//! treated_fraction = 0.02
//! [scenario.contamination]
//! rate = 0.2
//! arm = "both"
//! tail = { kind = "pareto", tail_index = 1.5, scale = 50.0 }
//!
//! [[learners]]
//! name = "rx"
//! kind = "rx_learner"
//! gamma = 0.2
//! ```
//!
//! Unknown keys are rejected. An empty learner list means the five benchmark
//! learners, all sharing the top-level `[boost]` table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boosting::BoostConfig;
use crate::data::{ScenarioSpec, SemiSyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{benchmark_learners, NamedLearner};
use crate::loss::{LossSpec, ScalePolicy, DEFAULT_GAMMA, DEFAULT_HUBER_MULTIPLIER};
use crate::metalearners::{AggregationScheme, LearnerKind, MetaLearnerSpec, PropensitySpec};

pub const CONFIG_VERSION: u32 = 1;

pub const PRESETS: &[(&str, &str)] = &[
    (
        "extreme_pathology",
        include_str!("../presets/extreme_pathology.toml"),
    ),
    ("sweep_0_20", include_str!("../presets/sweep_0_20.toml")),
    ("smearing", include_str!("../presets/smearing.toml")),
    (
        "small_sample_t3",
        include_str!("../presets/small_sample_t3.toml"),
    ),
    (
        "displacement_80_1",
        include_str!("../presets/displacement_80_1.toml"),
    ),
    ("curves_1d", include_str!("../presets/curves_1d.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    SquaredError,
    Huber,
    GammaWelsch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossName,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub delta_multiplier: Option<f64>,
    /// Re-estimate the scale anchor every k rounds instead of holding it fixed.
    #[serde(default)]
    pub refresh_every: Option<usize>,
}

impl LossConfig {
    fn to_spec(self, key: &str, out: &mut Vec<String>) -> LossSpec {
        let mut spec = match self.kind {
            LossName::SquaredError => LossSpec::squared(),
            LossName::Huber => {
                LossSpec::huber_with(self.delta_multiplier.unwrap_or(DEFAULT_HUBER_MULTIPLIER))
            }
            LossName::GammaWelsch => LossSpec::gamma_welsch(self.gamma.unwrap_or(DEFAULT_GAMMA)),
        };
        if self.gamma.is_some() && self.kind != LossName::GammaWelsch {
            out.push(format!("{key}.gamma only applies to gamma_welsch"));
        }
        if self.delta_multiplier.is_some() && self.kind != LossName::Huber {
            out.push(format!("{key}.delta_multiplier only applies to huber"));
        }
        if let Some(k) = self.refresh_every {
            if k == 0 {
                out.push(format!("{key}.refresh_every must be at least 1"));
            }
            spec.scale_policy = ScalePolicy::RefreshEvery(k);
        }
        if let Err(e) = spec.validate() {
            out.push(format!("{key}: {e}"));
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub name: String,
    pub kind: LearnerKind,
    /// Shorthand for both losses of an `rx_learner`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub base_loss: Option<LossConfig>,
    /// Defaults to `base_loss`.
    #[serde(default)]
    pub stage3_loss: Option<LossConfig>,
    #[serde(default)]
    pub aggregation: Option<AggregationScheme>,
    #[serde(default)]
    pub propensity: Option<PropensitySpec>,
    /// Overrides the top-level `[boost]` table for this learner.
    #[serde(default)]
    pub boost: Option<BoostConfig>,
}

impl LearnerConfig {
    fn build(&self, key: &str, boost: BoostConfig, out: &mut Vec<String>) -> NamedLearner {
        let default_spec = match self.kind {
            LearnerKind::TLearner => MetaLearnerSpec::t_learner(LossSpec::squared()),
            LearnerKind::XLearner => MetaLearnerSpec::x_mse(),
            LearnerKind::RxLearner => MetaLearnerSpec::rx(self.gamma.unwrap_or(DEFAULT_GAMMA)),
            LearnerKind::DrLearnerClipped => MetaLearnerSpec::dr_clipped(),
            LearnerKind::WinsorizedXLearner => MetaLearnerSpec::winsorized_x(),
        };
        let mut spec = default_spec.with_boost(self.boost.unwrap_or(boost));
        if self.gamma.is_some() && self.kind != LearnerKind::RxLearner {
            out.push(format!(
                "{key}.gamma only applies to rx_learner; set base_loss instead"
            ));
        }
        if self.gamma.is_some() && (self.base_loss.is_some() || self.stage3_loss.is_some()) {
            out.push(format!("{key}.gamma conflicts with an explicit loss table"));
        }
        if let Some(l) = self.base_loss {
            spec.base_loss = l.to_spec(&format!("{key}.base_loss"), out);
            spec.stage3_loss = spec.base_loss;
        }
        if let Some(l) = self.stage3_loss {
            spec.stage3_loss = l.to_spec(&format!("{key}.stage3_loss"), out);
        }
        if let Some(a) = self.aggregation {
            spec.aggregation = a;
        }
        if let Some(p) = self.propensity {
            spec.propensity = p;
        }
        out.extend(spec.violations().into_iter().map(|v| format!("{key}: {v}")));
        NamedLearner::new(self.name.clone(), spec)
    }
}

fn default_trials() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmearConfig {
    pub magnitudes: Vec<f64>,
    /// Treated unit receiving the outlier; the first treated unit if unset.
    #[serde(default)]
    pub unit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesConfig {
    #[serde(default = "CurvesConfig::default_n")]
    pub n: usize,
    #[serde(default = "CurvesConfig::default_outliers")]
    pub outliers: usize,
    #[serde(default = "CurvesConfig::default_gamma")]
    pub gamma: f64,
}

impl CurvesConfig {
    fn default_n() -> usize {
        200
    }
    fn default_outliers() -> usize {
        5
    }
    fn default_gamma() -> f64 {
        DEFAULT_GAMMA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSyntheticConfig {
    /// Covariate CSV; a generated surrogate is used when unset.
    #[serde(default)]
    pub covariates: Option<PathBuf>,
    #[serde(default = "SemiSyntheticConfig::default_rows")]
    pub surrogate_rows: usize,
    #[serde(default = "SemiSyntheticConfig::default_cols")]
    pub surrogate_cols: usize,
    #[serde(default)]
    pub dgp: SemiSyntheticSpec,
}

impl SemiSyntheticConfig {
    fn default_rows() -> usize {
        61_200
    }
    fn default_cols() -> usize {
        12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Overrides every seed in the document when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub boost: BoostConfig,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub semi_synthetic: Option<SemiSyntheticConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub smear: Option<SmearConfig>,
    #[serde(default)]
    pub curves: Option<CurvesConfig>,
    #[serde(default)]
    pub learners: Vec<LearnerConfig>,
}

impl RunConfig {
    /// Parse and validate. `origin` names the source in diagnostics.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<RunConfig> {
        let value: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Config(vec![format!("{origin}: {}", e.message())]))?;
        match value.get("version") {
            None => {
                return Err(Error::Config(vec![format!(
                    "{origin}: missing key `version`"
                )]))
            }
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
            Some(toml::Value::Integer(v)) => {
                return Err(Error::SchemaVersion {
                    what: "config",
                    found: u32::try_from(*v).unwrap_or(u32::MAX),
                    expected: CONFIG_VERSION,
                })
            }
            Some(_) => {
                return Err(Error::Config(vec![format!(
                    "{origin}: `version` must be an integer"
                )]))
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::Config(vec![format!("{origin}: {msg}")])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        let text = preset_text(name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(vec![format!(
                "unknown preset `{name}`; known: {}",
                known.join(", ")
            )])
        })?;
        Self::from_toml_str(text, &format!("preset {name}"))
    }

    /// Every violation in the document, each prefixed with its key.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trials < 1 {
            out.push("trials must be at least 1".into());
        }
        out.extend(
            self.boost
                .violations()
                .into_iter()
                .map(|v| format!("boost.{v}")),
        );
        if let Some(s) = &self.scenario {
            out.extend(s.violations());
        }
        if let Some(s) = &self.semi_synthetic {
            out.extend(s.dgp.violations());
            if s.covariates.is_none() && (s.surrogate_rows < 10 || s.surrogate_cols < 1) {
                out.push(
                    "semi_synthetic.surrogate_rows must be >= 10 and surrogate_cols >= 1".into(),
                );
            }
        }
        if let Some(s) = &self.sweep {
            if s.rates.is_empty() {
                out.push("sweep.rates must not be empty".into());
            }
            for r in &s.rates {
                if !(0.0..1.0).contains(r) {
                    out.push(format!("sweep.rates: {r} lies outside [0, 1)"));
                }
            }
            if self.scenario.is_none() {
                out.push("sweep requires a [scenario] table".into());
            }
        }
        if let Some(s) = &self.smear {
            if !s.magnitudes.contains(&0.0) {
                out.push("smear.magnitudes must include the 0 baseline".into());
            }
            if s.magnitudes.iter().any(|m| !m.is_finite()) {
                out.push("smear.magnitudes must be finite".into());
            }
            if self.scenario.is_none() {
                out.push("smear requires a [scenario] table".into());
            }
        }
        if let Some(c) = &self.curves {
            if c.n < 2 || c.outliers >= c.n / 2 {
                out.push(format!(
                    "curves needs n >= 2 and outliers < n / 2, got ({}, {})",
                    c.n, c.outliers
                ));
            }
            if !(c.gamma > 0.0) {
                out.push(format!("curves.gamma must be positive, got {}", c.gamma));
            }
        }
        let mut names: Vec<&str> = Vec::new();
        for (i, l) in self.learners.iter().enumerate() {
            if names.contains(&l.name.as_str()) {
                out.push(format!("learners[{i}].name `{}` is duplicated", l.name));
            }
            names.push(&l.name);
            l.build(&format!("learners[{i}]"), self.boost, &mut out);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }

    /// Seed in effect: the override if set, else `fallback`.
    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let s = self
            .scenario
            .ok_or_else(|| Error::Config(vec!["missing [scenario] table".into()]))?;
        Ok(ScenarioSpec {
            seed: self.seed_or(s.seed),
            ..s
        })
    }

    pub fn semi_synthetic(&self) -> Result<SemiSyntheticConfig> {
        let mut s = self
            .semi_synthetic
            .clone()
            .ok_or_else(|| Error::Config(vec!["missing [semi_synthetic] table".into()]))?;
        s.dgp.seed = self.seed_or(s.dgp.seed);
        Ok(s)
    }

    pub fn learners(&self) -> Result<Vec<NamedLearner>> {
        if self.learners.is_empty() {
            return Ok(benchmark_learners(self.boost));
        }
        let mut out = Vec::new();
        let built = self
            .learners
            .iter()
            .enumerate()
            .map(|(i, l)| l.build(&format!("learners[{i}]"), self.boost, &mut out))
            .collect();
        if out.is_empty() {
            Ok(built)
        } else {
            Err(Error::Config(out))
        }
    }
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
