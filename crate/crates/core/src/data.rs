//! Datasets, synthetic Core-Periphery generators, the semi-synthetic outcome
//! model applied over external covariates, and CSV ingestion.
//!
//! Every generator is a pure function of its spec and seed. Noise follows
//!
//! ```text
//! Y = μ₀(X) + τ(X)·W + ε,   ε ~ (1 - α) φ_core + α h_tail
//! ```
//!
//! where the tail component marks the unit in `outlier_mask`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, Pareto, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::stats::quantile;

/// Dense row-major covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            rows >= 1 && cols >= 1,
            "feature matrix must be at least 1x1, got {rows}x{cols}"
        );
        ensure!(
            values.len() == rows * cols,
            "feature matrix expects {} values, got {}",
            rows * cols,
            values.len()
        );
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite covariate at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(FeatureMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), "feature matrix needs at least one row");
        let cols = rows[0].len();
        ensure!(rows.iter().all(|r| r.len() == cols), "ragged feature rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalDataset {
    pub features: FeatureMatrix,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
    pub true_cate: Option<Vec<f64>>,
    pub outlier_mask: Option<Vec<bool>>,
    pub true_propensity: Option<Vec<f64>>,
}

impl CausalDataset {
    pub fn new(
        features: FeatureMatrix,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        true_cate: Option<Vec<f64>>,
        outlier_mask: Option<Vec<bool>>,
        true_propensity: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = CausalDataset {
            features,
            treatment,
            outcome,
            true_cate,
            outlier_mask,
            true_propensity,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        ensure!(
            self.treatment.len() == n,
            "treatment has {} entries for {n} rows",
            self.treatment.len()
        );
        ensure!(
            self.outcome.len() == n,
            "outcome has {} entries for {n} rows",
            self.outcome.len()
        );
        ensure!(
            self.outcome.iter().all(|y| y.is_finite()),
            "outcomes must be finite"
        );
        if let Some(t) = &self.true_cate {
            ensure!(
                t.len() == n,
                "true_cate has {} entries for {n} rows",
                t.len()
            );
        }
        if let Some(m) = &self.outlier_mask {
            ensure!(
                m.len() == n,
                "outlier_mask has {} entries for {n} rows",
                m.len()
            );
            ensure!(self.true_cate.is_some(), "outlier_mask requires true_cate");
        }
        if let Some(p) = &self.true_propensity {
            ensure!(
                p.len() == n,
                "true_propensity has {} entries for {n} rows",
                p.len()
            );
            ensure!(
                p.iter().all(|&v| v > 0.0 && v < 1.0),
                "true_propensity must lie in (0,1)"
            );
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&w| w).count()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treatment[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.treatment[i]).collect()
    }

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> CausalDataset {
        let pick_f = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_b = |v: &Vec<bool>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        CausalDataset {
            features: self.features.select_rows(idx),
            treatment: pick_b(&self.treatment),
            outcome: pick_f(&self.outcome),
            true_cate: self.true_cate.as_ref().map(pick_f),
            outlier_mask: self.outlier_mask.as_ref().map(pick_b),
            true_propensity: self.true_propensity.as_ref().map(pick_f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailKind {
    /// One-sided: the tail draw `t ~ Pareto(tail_index, scale)` is added, `t ≥ scale`.
    Pareto {
        tail_index: f64,
        scale: f64,
    },
    StudentT {
        df: f64,
    },
    Cauchy {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailArm {
    TreatedOnly,
    ControlOnly,
    Both,
}

impl TailArm {
    fn covers(self, treated: bool) -> bool {
        match self {
            TailArm::TreatedOnly => treated,
            TailArm::ControlOnly => !treated,
            TailArm::Both => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    /// α, the probability that an eligible unit draws from the tail.
    pub rate: f64,
    #[serde(default = "default_core_sd")]
    pub core_sd: f64,
    /// Student-t core with this many degrees of freedom (scaled by `core_sd`)
    /// instead of a Gaussian core.
    #[serde(default)]
    pub core_df: Option<f64>,
    pub tail: TailKind,
    pub arm: TailArm,
}

fn default_core_sd() -> f64 {
    1.0
}

impl ContaminationSpec {
    /// Clean Gaussian noise with σ = 1.
    pub fn none() -> Self {
        ContaminationSpec {
            rate: 0.0,
            core_sd: 1.0,
            core_df: None,
            tail: TailKind::Pareto {
                tail_index: 1.5,
                scale: 1.0,
            },
            arm: TailArm::TreatedOnly,
        }
    }

    pub fn pareto(rate: f64, tail_index: f64, scale: f64, arm: TailArm) -> Self {
        ContaminationSpec {
            rate,
            tail: TailKind::Pareto { tail_index, scale },
            arm,
            ..Self::none()
        }
    }

    fn violations(&self, out: &mut Vec<String>) {
        if !(0.0..1.0).contains(&self.rate) {
            out.push(format!(
                "contamination.rate must lie in [0, 1), got {}",
                self.rate
            ));
        }
        if !(self.core_sd > 0.0 && self.core_sd.is_finite()) {
            out.push(format!(
                "contamination.core_sd must be positive, got {}",
                self.core_sd
            ));
        }
        if let Some(df) = self.core_df {
            if !(df > 0.0) {
                out.push(format!("contamination.core_df must be positive, got {df}"));
            }
        }
        match self.tail {
            TailKind::Pareto { tail_index, scale } => {
                if !(tail_index > 0.0) || !(scale > 0.0) {
                    out.push(format!(
                        "pareto tail needs tail_index > 0 and scale > 0, got ({tail_index}, {scale})"
                    ));
                }
            }
            TailKind::StudentT { df } => {
                if !(df > 0.0) {
                    out.push(format!("student_t tail needs df > 0, got {df}"));
                }
            }
            TailKind::Cauchy { scale } => {
                if !(scale > 0.0) {
                    out.push(format!("cauchy tail needs scale > 0, got {scale}"));
                }
            }
        }
    }
}

struct NoiseSampler {
    core: CoreNoise,
    tail: TailNoise,
}

enum CoreNoise {
    Gaussian(Normal<f64>),
    Student(StudentT<f64>, f64),
}

enum TailNoise {
    Pareto(Pareto<f64>),
    Student(StudentT<f64>, f64),
    Cauchy(Cauchy<f64>),
}

impl NoiseSampler {
    fn new(spec: &ContaminationSpec) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::Validation(e.to_string());
        let core = match spec.core_df {
            None => CoreNoise::Gaussian(Normal::new(0.0, spec.core_sd).map_err(|e| bad(&e))?),
            Some(df) => CoreNoise::Student(StudentT::new(df).map_err(|e| bad(&e))?, spec.core_sd),
        };
        let tail = match spec.tail {
            TailKind::Pareto { tail_index, scale } => {
                TailNoise::Pareto(Pareto::new(scale, tail_index).map_err(|e| bad(&e))?)
            }
            TailKind::StudentT { df } => {
                TailNoise::Student(StudentT::new(df).map_err(|e| bad(&e))?, spec.core_sd)
            }
            TailKind::Cauchy { scale } => {
                TailNoise::Cauchy(Cauchy::new(0.0, scale).map_err(|e| bad(&e))?)
            }
        };
        Ok(NoiseSampler { core, tail })
    }

    fn core<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.core {
            CoreNoise::Gaussian(d) => d.sample(rng),
            CoreNoise::Student(d, s) => s * d.sample(rng),
        }
    }

    fn tail<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.tail {
            TailNoise::Pareto(d) => d.sample(rng),
            TailNoise::Student(d, s) => s * d.sample(rng),
            TailNoise::Cauchy(d) => d.sample(rng),
        }
    }
}

/// Baseline response catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mu0Form {
    /// `sin(π x₁) + x₂²` (the quadratic term is dropped for 1-D inputs).
    #[default]
    SinQuadratic,
    Zero,
}

impl Mu0Form {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Mu0Form::SinQuadratic => {
                let quad = x.get(1).map_or(0.0, |v| v * v);
                (PI * x[0]).sin() + quad
            }
            Mu0Form::Zero => 0.0,
        }
    }
}

/// Treatment-effect catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauForm {
    /// `1 + x₁ / 2`.
    #[default]
    Linear,
    Constant(f64),
}

impl TauForm {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TauForm::Linear => 1.0 + 0.5 * x[0],
            TauForm::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    /// Covariate dimension; covariates are drawn i.i.d. Uniform(-1, 1).
    #[serde(default = "default_features")]
    pub n_features: usize,
    pub treated_fraction: f64,
    pub contamination: ContaminationSpec,
    #[serde(default)]
    pub mu0: Mu0Form,
    #[serde(default)]
    pub tau: TauForm,
    #[serde(default)]
    pub seed: u64,
}

fn default_features() -> usize {
    5
}

impl ScenarioSpec {
    pub fn new(
        n: usize,
        treated_fraction: f64,
        contamination: ContaminationSpec,
        seed: u64,
    ) -> Self {
        ScenarioSpec {
            n,
            n_features: default_features(),
            treated_fraction,
            contamination,
            mu0: Mu0Form::SinQuadratic,
            tau: TauForm::Linear,
            seed,
        }
    }

    pub fn n_treated(&self) -> usize {
        (self.n as f64 * self.treated_fraction).round() as usize
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_features < 1 {
            out.push("scenario.n_features must be at least 1".into());
        }
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            out.push(format!(
                "scenario.treated_fraction must lie in (0, 1), got {}",
                self.treated_fraction
            ));
        } else if (self.n as f64) * self.treated_fraction < 2.0 || self.n_treated() + 2 > self.n {
            out.push(format!(
                "scenario.n = {} with treated_fraction {} leaves fewer than 2 units in an arm",
                self.n, self.treated_fraction
            ));
        }
        self.contamination.violations(&mut out);
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

fn assign_treatment<R: Rng>(rng: &mut R, n: usize, n_treated: usize) -> Vec<bool> {
    let mut w = vec![false; n];
    for i in index::sample(rng, n, n_treated) {
        w[i] = true;
    }
    w
}

/// Draw a Core-Periphery dataset. Assignment is randomized with exactly
/// `round(n · treated_fraction)` treated units.
pub fn generate_synthetic(spec: &ScenarioSpec) -> Result<CausalDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n, spec.n_features);
    let values: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let features = FeatureMatrix::new(n, d, values)?;
    let treatment = assign_treatment(&mut rng, n, spec.n_treated());

    let c = &spec.contamination;
    let noise = NoiseSampler::new(c)?;
    let mut outcome = Vec::with_capacity(n);
    let mut true_cate = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for (i, &w) in treatment.iter().enumerate() {
        let x = features.row(i);
        let tau = spec.tau.eval(x);
        // one uniform per unit whatever the arm, so the stream layout is fixed
        let u: f64 = rng.random();
        let is_tail = c.arm.covers(w) && u < c.rate;
        let eps = if is_tail {
            noise.tail(&mut rng)
        } else {
            noise.core(&mut rng)
        };
        outcome.push(spec.mu0.eval(x) + if w { tau } else { 0.0 } + eps);
        true_cate.push(tau);
        mask.push(is_tail);
    }
    CausalDataset::new(
        features,
        treatment,
        outcome,
        Some(true_cate),
        Some(mask),
        Some(vec![spec.treated_fraction; n]),
    )
}

pub const ONE_D_NOISE_SD: f64 = 0.3;
pub const ONE_D_TAU: f64 = 1.0;
/// Outliers in the 1-D set sit this far above the curve (plus up to 10 more).
pub const ONE_D_WHALE_MAGNITUDE: f64 = 40.0;
/// Centre of the outlier cluster on the [-1, 1] grid.
pub const ONE_D_CLUSTER_CENTER: f64 = 0.5;

/// 1-D grid on [-1, 1], alternating control/treated, `μ₀ = sin(πx)`, constant
/// τ. The outliers are the treated units nearest [`ONE_D_CLUSTER_CENTER`].
/// Core noise does not depend on `outlier_count`, so `(n, 0, seed)` is the
/// clean counterpart of `(n, k, seed)`.
pub fn generate_1d_qualitative(n: usize, outlier_count: usize, seed: u64) -> Result<CausalDataset> {
    ensure!(
        n >= 2 && n > outlier_count,
        "need n > outlier_count and n >= 2, got ({n}, {outlier_count})"
    );
    let treatment: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
    let n_treated = n / 2;
    ensure!(
        outlier_count <= n_treated,
        "outlier_count {outlier_count} exceeds the {n_treated} treated units"
    );
    let xs: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, ONE_D_NOISE_SD).expect("positive sd");
    let mut outcome: Vec<f64> = xs
        .iter()
        .zip(&treatment)
        .map(|(&x, &w)| (PI * x).sin() + if w { ONE_D_TAU } else { 0.0 } + normal.sample(&mut rng))
        .collect();

    let mut treated: Vec<usize> = (0..n).filter(|&i| treatment[i]).collect();
    treated.sort_by(|&a, &b| {
        let da = (xs[a] - ONE_D_CLUSTER_CENTER).abs();
        let db = (xs[b] - ONE_D_CLUSTER_CENTER).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut mask = vec![false; n];
    let mut whale_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &i in treated.iter().take(outlier_count) {
        mask[i] = true;
        outcome[i] += ONE_D_WHALE_MAGNITUDE + 10.0 * whale_rng.random::<f64>();
    }
    let features = FeatureMatrix::new(n, 1, xs)?;
    CausalDataset::new(
        features,
        treatment,
        outcome,
        Some(vec![ONE_D_TAU; n]),
        Some(mask),
        Some(vec![0.5; n]),
    )
}

/// Add `magnitude` to the outcome of treated unit `unit_index` and flag it.
/// The flag is only recorded when the dataset carries ground truth.
pub fn inject_outlier(
    data: &CausalDataset,
    unit_index: usize,
    magnitude: f64,
) -> Result<CausalDataset> {
    ensure!(
        unit_index < data.len(),
        "unit index {unit_index} out of range for {} units",
        data.len()
    );
    ensure!(
        data.treatment[unit_index],
        "unit {unit_index} is not treated"
    );
    ensure!(magnitude.is_finite(), "outlier magnitude must be finite");
    let mut out = data.clone();
    out.outcome[unit_index] += magnitude;
    if out.true_cate.is_some() {
        let n = out.len();
        out.outlier_mask.get_or_insert_with(|| vec![false; n])[unit_index] = true;
    }
    Ok(out)
}

/// Clip outcomes to the empirical `[lower_q, upper_q]` quantiles over all units.
pub fn winsorize_outcomes(
    data: &CausalDataset,
    lower_q: f64,
    upper_q: f64,
) -> Result<CausalDataset> {
    ensure!(
        (0.0..=1.0).contains(&lower_q) && (0.0..=1.0).contains(&upper_q) && lower_q < upper_q,
        "winsorize needs 0 <= lower_q < upper_q <= 1, got ({lower_q}, {upper_q})"
    );
    let lo = quantile(&data.outcome, lower_q);
    let hi = quantile(&data.outcome, upper_q);
    let mut out = data.clone();
    for y in out.outcome.iter_mut() {
        *y = y.clamp(lo, hi);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSyntheticSpec {
    #[serde(default = "SemiSyntheticSpec::default_treated_fraction")]
    pub treated_fraction: f64,
    #[serde(default = "SemiSyntheticSpec::default_tail_index")]
    pub tail_index: f64,
    /// Pareto scale x_m of the whale noise. With the default tail index the
    /// mean whale is `1.1 · 5 / 0.1 = 55`.
    #[serde(default = "SemiSyntheticSpec::default_tail_scale")]
    pub tail_scale: f64,
    #[serde(default = "SemiSyntheticSpec::default_contaminated")]
    pub contaminated_treated_fraction: f64,
    #[serde(default = "SemiSyntheticSpec::default_target")]
    pub target_mean_tau: f64,
    /// `None` = unit coefficients on the first `min(5, d)` standardized covariates.
    #[serde(default)]
    pub tau_coefficients: Option<Vec<f64>>,
    #[serde(default = "default_core_sd")]
    pub core_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SemiSyntheticSpec {
    fn default() -> Self {
        SemiSyntheticSpec {
            treated_fraction: Self::default_treated_fraction(),
            tail_index: Self::default_tail_index(),
            tail_scale: Self::default_tail_scale(),
            contaminated_treated_fraction: Self::default_contaminated(),
            target_mean_tau: Self::default_target(),
            tau_coefficients: None,
            core_sd: 1.0,
            seed: 0,
        }
    }
}

impl SemiSyntheticSpec {
    fn default_treated_fraction() -> f64 {
        0.02
    }
    fn default_tail_index() -> f64 {
        1.1
    }
    fn default_tail_scale() -> f64 {
        5.0
    }
    fn default_contaminated() -> f64 {
        0.05
    }
    fn default_target() -> f64 {
        0.66
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 0.5) {
            out.push(format!(
                "semi_synthetic.treated_fraction must lie in (0, 0.5), got {}",
                self.treated_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.contaminated_treated_fraction) {
            out.push(format!(
                "semi_synthetic.contaminated_treated_fraction must lie in [0, 1), got {}",
                self.contaminated_treated_fraction
            ));
        }
        if !(self.tail_index > 0.0 && self.tail_scale > 0.0) {
            out.push("semi_synthetic.tail_index and tail_scale must be positive".into());
        }
        if !(self.target_mean_tau > 0.0) {
            out.push("semi_synthetic.target_mean_tau must be positive".into());
        }
        if !(self.core_sd > 0.0) {
            out.push("semi_synthetic.core_sd must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        ensure!(v.is_empty(), "{}", v.join("; "));
        Ok(())
    }
}

fn column_moments(features: &FeatureMatrix, j: usize) -> (f64, f64) {
    let n = features.rows() as f64;
    let mean = (0..features.rows())
        .map(|i| features.get(i, j))
        .sum::<f64>()
        / n;
    let var = (0..features.rows())
        .map(|i| (features.get(i, j) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Semi-synthetic outcome model over real covariates. Covariates are
/// standardized; `τ` is linear in the coefficient support and then rescaled
/// affinely so that mean |τ| equals `target_mean_tau` on this matrix. The
/// baseline is `sin(π z₀) + tanh(z₁)`, bounded so that skewed covariates do
/// not dominate the outcome scale.
pub fn apply_semi_synthetic_dgp(
    features: &FeatureMatrix,
    spec: &SemiSyntheticSpec,
) -> Result<CausalDataset> {
    let v = spec.violations();
    ensure!(v.is_empty(), "{}", v.join("; "));
    let (n, d) = (features.rows(), features.cols());
    let coefs: Vec<f64> = match &spec.tau_coefficients {
        Some(c) => {
            ensure!(
                !c.is_empty() && c.len() <= d,
                "tau_coefficients has {} entries for {d} covariates",
                c.len()
            );
            c.clone()
        }
        None => vec![1.0; d.min(5)],
    };
    let moments: Vec<(f64, f64)> = (0..d).map(|j| column_moments(features, j)).collect();
    for (j, &c) in coefs.iter().enumerate() {
        if c != 0.0 && moments[j].1 <= 1e-12 {
            return Err(Error::Validation(format!(
                "covariate {j} has zero variance but carries tau coefficient {c}"
            )));
        }
    }
    let z = |i: usize, j: usize| {
        let (m, s) = moments[j];
        if s > 1e-12 {
            (features.get(i, j) - m) / s
        } else {
            0.0
        }
    };

    let score: Vec<f64> = (0..n)
        .map(|i| coefs.iter().enumerate().map(|(j, c)| c * z(i, j)).sum())
        .collect();
    let s_mean = score.iter().sum::<f64>() / n as f64;
    let s_sd = (score.iter().map(|s| (s - s_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    ensure!(s_sd > 1e-12, "tau score is constant across units");
    let raw: Vec<f64> = score
        .iter()
        .map(|s| 1.0 + 0.5 * (s - s_mean) / s_sd)
        .collect();
    let raw_mag = raw.iter().map(|t| t.abs()).sum::<f64>() / n as f64;
    let k = spec.target_mean_tau / raw_mag;
    let tau: Vec<f64> = raw.iter().map(|t| k * t).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_treated =
        ((n as f64 * spec.treated_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let treatment = assign_treatment(&mut rng, n, n_treated);
    let treated: Vec<usize> = (0..n).filter(|&i| treatment[i]).collect();
    let n_whales = (treated.len() as f64 * spec.contaminated_treated_fraction).round() as usize;
    let mut mask = vec![false; n];
    for k in index::sample(&mut rng, treated.len(), n_whales) {
        mask[treated[k]] = true;
    }

    let core = Normal::new(0.0, spec.core_sd).map_err(|e| Error::Validation(e.to_string()))?;
    let tail = Pareto::new(spec.tail_scale, spec.tail_index)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let mut outcome = Vec::with_capacity(n);
    for i in 0..n {
        let base = (PI * z(i, 0)).sin() + if d > 1 { z(i, 1).tanh() } else { 0.0 };
        let mut y = base + core.sample(&mut rng);
        if treatment[i] {
            y += tau[i];
        }
        if mask[i] {
            y += tail.sample(&mut rng);
        }
        outcome.push(y);
    }
    CausalDataset::new(
        features.clone(),
        treatment,
        outcome,
        Some(tau),
        Some(mask),
        Some(vec![n_treated as f64 / n as f64; n]),
    )
}

/// Stand-in for an advertising covariate table: correlated columns mixing
/// log-normal spend-like features, point-mass-plus-tail count features and
/// Gaussian features.
pub fn surrogate_covariates(rows: usize, cols: usize, seed: u64) -> Result<FeatureMatrix> {
    ensure!(
        rows >= 1 && cols >= 1,
        "surrogate covariates need at least one row and column"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let shared: f64 = normal.sample(&mut rng);
        for j in 0..cols {
            let u = 0.6 * shared + 0.8 * normal.sample(&mut rng);
            let v = match j % 3 {
                0 => (0.5 * u).exp(),
                1 => {
                    if rng.random::<f64>() < 0.7 {
                        3.9
                    } else {
                        3.9 + 2.0 * u.abs()
                    }
                }
                _ => u,
            };
            values.push(v);
        }
    }
    FeatureMatrix::new(rows, cols, values)
}

const REQUIRED: [&str; 2] = ["w", "y"];

fn parse_cell(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: format!("non-numeric value {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message: format!("non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

fn parse_flag(path: &Path, line: u64, column: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            column: column.to_string(),
            message: format!("expected 0 or 1, got {other:?}"),
        }),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

/// Read a dataset with header `f0,...,f{d-1},w,y[,tau_true][,is_outlier]`.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<CausalDataset> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::malformed(path, e))?
        .clone();
    let pos: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    for col in REQUIRED {
        if !pos.contains_key(col) {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: col.into(),
            });
        }
    }
    let mut feature_cols = Vec::new();
    while let Some(&i) = pos.get(format!("f{}", feature_cols.len()).as_str()) {
        feature_cols.push(i);
    }
    if feature_cols.is_empty() {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "f0".into(),
        });
    }
    let tau_col = pos.get("tau_true").copied();
    let out_col = pos.get("is_outlier").copied();
    if out_col.is_some() && tau_col.is_none() {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "tau_true".into(),
        });
    }

    let d = feature_cols.len();
    let (mut values, mut w, mut y, mut tau, mut mask) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| Error::malformed(path, e))?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        for (j, &c) in feature_cols.iter().enumerate() {
            values.push(parse_cell(path, line, &format!("f{j}"), cell(c))?);
        }
        w.push(parse_flag(path, line, "w", cell(pos["w"]))?);
        y.push(parse_cell(path, line, "y", cell(pos["y"]))?);
        if let Some(c) = tau_col {
            tau.push(parse_cell(path, line, "tau_true", cell(c))?);
        }
        if let Some(c) = out_col {
            mask.push(parse_flag(path, line, "is_outlier", cell(c))?);
        }
    }
    ensure!(!y.is_empty(), "{}: no data rows", path.display());
    let features = FeatureMatrix::new(y.len(), d, values)?;
    CausalDataset::new(
        features,
        w,
        y,
        tau_col.map(|_| tau),
        out_col.map(|_| mask),
        None,
    )
}

pub fn save_dataset_csv(data: &CausalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    let d = data.features.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.extend(["w".into(), "y".into()]);
    if data.true_cate.is_some() {
        header.push("tau_true".into());
    }
    if data.outlier_mask.is_some() {
        header.push("is_outlier".into());
    }
    let io = |e: csv::Error| Error::malformed(path, e);
    wtr.write_record(&header).map_err(io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(if data.treatment[i] { "1" } else { "0" }.into());
        rec.push(data.outcome[i].to_string());
        if let Some(t) = &data.true_cate {
            rec.push(t[i].to_string());
        }
        if let Some(m) = &data.outlier_mask {
            rec.push(if m[i] { "1" } else { "0" }.into());
        }
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Read an all-numeric covariate table (header row required, any column names).
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut rdr = open_csv(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::malformed(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(path, e))?;
        for (j, name) in headers.iter().enumerate() {
            values.push(parse_cell(
                path,
                k as u64 + 2,
                name,
                rec.get(j).unwrap_or(""),
            )?);
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, headers.len(), values)
}

pub fn save_features_csv(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::malformed(path, e);
    let mut wtr = csv::Writer::from_path(path).map_err(io)?;
    wtr.write_record((0..features.cols()).map(|j| format!("f{j}")))
        .map_err(io)?;
    for i in 0..features.rows() {
        wtr.write_record(features.row(i).iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
