//! Metrics and experiment runners.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{fit_boosted, BoostConfig, BoostedEnsemble};
use crate::data::{
    apply_semi_synthetic_dgp, generate_synthetic, inject_outlier, CausalDataset, FeatureMatrix,
    ScenarioSpec, SemiSyntheticSpec,
};
use crate::error::{ensure, Error, Result};
use crate::loss::LossSpec;
use crate::metalearners::{fit_meta, predict_cate, MetaLearnerSpec};
use crate::stats::{mean, median, sample_sd};

/// Mixed into the trial seed to get an independent stream for the fit/eval split.
const SPLIT_STREAM: u64 = 0x51_7e_ed_00_5b_11_7a_3c;

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: b.len(),
            got: a.len(),
        });
    }
    ensure!(!a.is_empty(), "metric needs at least one unit");
    Ok(())
}

/// Root-mean-squared CATE error.
pub fn pehe(predicted: &[f64], true_cate: &[f64]) -> Result<f64> {
    check_lengths(predicted, true_cate)?;
    let sse: f64 = predicted
        .iter()
        .zip(true_cate)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// PEHE over the units with `outlier_mask = false`.
pub fn core_pehe(predicted: &[f64], true_cate: &[f64], outlier_mask: &[bool]) -> Result<f64> {
    check_lengths(predicted, true_cate)?;
    ensure!(
        outlier_mask.len() == predicted.len(),
        "mask has {} entries for {} units",
        outlier_mask.len(),
        predicted.len()
    );
    let (p, t): (Vec<f64>, Vec<f64>) = predicted
        .iter()
        .zip(true_cate)
        .zip(outlier_mask)
        .filter(|(_, &m)| !m)
        .map(|((&p, &t), _)| (p, t))
        .unzip();
    ensure!(!p.is_empty(), "every unit is masked as an outlier");
    pehe(&p, &t)
}

/// `|mean(τ̂) − mean(τ)|`.
pub fn ate_bias(predicted: &[f64], true_cate: &[f64]) -> Result<f64> {
    check_lengths(predicted, true_cate)?;
    Ok((mean(predicted) - mean(true_cate)).abs())
}

/// A learner spec with a display name used in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLearner {
    pub name: String,
    pub spec: MetaLearnerSpec,
}

impl NamedLearner {
    pub fn new(name: impl Into<String>, spec: MetaLearnerSpec) -> Self {
        NamedLearner {
            name: name.into(),
            spec,
        }
    }
}

/// The five learners compared in the benchmark tables, all sharing `boost`.
pub fn benchmark_learners(boost: BoostConfig) -> Vec<NamedLearner> {
    vec![
        NamedLearner::new("mse_x", MetaLearnerSpec::x_mse().with_boost(boost)),
        NamedLearner::new(
            "winsorized_x",
            MetaLearnerSpec::winsorized_x().with_boost(boost),
        ),
        NamedLearner::new(
            "dr_clipped",
            MetaLearnerSpec::dr_clipped().with_boost(boost),
        ),
        NamedLearner::new("huber_x", MetaLearnerSpec::x_huber().with_boost(boost)),
        NamedLearner::new("rx", MetaLearnerSpec::rx_default().with_boost(boost)),
    ]
}

/// Stratified 50/50 split: within each arm, a shuffled half (rounded up) goes
/// to the fit set. Both index lists are returned sorted.
pub fn stratified_split(data: &CausalDataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit = Vec::with_capacity(data.len() / 2 + 2);
    let mut eval = Vec::with_capacity(data.len() / 2 + 2);
    for mut arm in [data.control_indices(), data.treated_indices()] {
        arm.shuffle(&mut rng);
        let k = arm.len().div_ceil(2);
        fit.extend_from_slice(&arm[..k]);
        eval.extend_from_slice(&arm[k..]);
    }
    fit.sort_unstable();
    eval.sort_unstable();
    (fit, eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub learner: String,
    pub pehe: f64,
    pub core_pehe: Option<f64>,
    pub ate_bias: f64,
    /// Set when the learner failed on this trial; the metrics are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// n−1 denominator; 0 when fewer than two values.
    pub sd: f64,
    pub median: f64,
    pub sd_defined: bool,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                n: 0,
                mean: f64::NAN,
                sd: 0.0,
                median: f64::NAN,
                sd_defined: false,
            };
        }
        Summary {
            n: values.len(),
            mean: mean(values),
            sd: sample_sd(values),
            median: median(values),
            sd_defined: values.len() >= 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub learner: String,
    pub pehe: Summary,
    pub core_pehe: Option<Summary>,
    pub ate_bias: Summary,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub rate: Option<f64>,
    pub per_trial: Vec<TrialRow>,
    pub aggregated: Vec<LearnerSummary>,
}

/// The aggregated part of an [`EvalReport`], written as the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub scenario: String,
    pub rate: Option<f64>,
    pub aggregated: Vec<LearnerSummary>,
}

impl EvalReport {
    /// Build the report, deriving `aggregated` from `per_trial`. Learner order
    /// follows first appearance.
    pub fn from_rows(
        scenario: impl Into<String>,
        rate: Option<f64>,
        per_trial: Vec<TrialRow>,
    ) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for r in &per_trial {
            if !names.contains(&r.learner.as_str()) {
                names.push(&r.learner);
            }
        }
        let aggregated = names
            .iter()
            .map(|&name| {
                let ok: Vec<&TrialRow> = per_trial
                    .iter()
                    .filter(|r| r.learner == name && r.error.is_none())
                    .collect();
                let failures = per_trial
                    .iter()
                    .filter(|r| r.learner == name && r.error.is_some())
                    .count();
                let col = |f: fn(&TrialRow) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
                let core: Option<Vec<f64>> = ok.iter().map(|r| r.core_pehe).collect();
                LearnerSummary {
                    learner: name.to_string(),
                    pehe: Summary::of(&col(|r| r.pehe)),
                    core_pehe: core.filter(|c| !c.is_empty()).map(|c| Summary::of(&c)),
                    ate_bias: Summary::of(&col(|r| r.ate_bias)),
                    failures,
                }
            })
            .collect();
        EvalReport {
            scenario: scenario.into(),
            rate,
            per_trial,
            aggregated,
        }
    }

    pub fn learner(&self, name: &str) -> Option<&LearnerSummary> {
        self.aggregated.iter().find(|s| s.learner == name)
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            scenario: self.scenario.clone(),
            rate: self.rate,
            aggregated: self.aggregated.clone(),
        }
    }

    /// Core-PEHE summary when available, otherwise PEHE.
    pub fn headline(&self, name: &str) -> Option<Summary> {
        self.learner(name).map(|s| s.core_pehe.unwrap_or(s.pehe))
    }
}

fn nan_row(trial: usize, seed: u64, learner: &str, error: String) -> TrialRow {
    TrialRow {
        trial,
        seed,
        learner: learner.to_string(),
        pehe: f64::NAN,
        core_pehe: None,
        ate_bias: f64::NAN,
        error: Some(error),
    }
}

/// Split, fit every learner on the fit half, score on the eval half.
pub fn evaluate_dataset(
    data: &CausalDataset,
    learners: &[NamedLearner],
    trial: usize,
    seed: u64,
) -> Vec<TrialRow> {
    let Some(tau) = data.true_cate.as_ref() else {
        return learners
            .iter()
            .map(|l| nan_row(trial, seed, &l.name, "dataset has no true_cate".into()))
            .collect();
    };
    let (fit_idx, eval_idx) = stratified_split(data, seed ^ SPLIT_STREAM);
    let fit_set = data.subset(&fit_idx);
    let eval_x = data.features.select_rows(&eval_idx);
    let eval_tau: Vec<f64> = eval_idx.iter().map(|&i| tau[i]).collect();
    let eval_mask: Option<Vec<bool>> = data
        .outlier_mask
        .as_ref()
        .map(|m| eval_idx.iter().map(|&i| m[i]).collect());

    learners
        .par_iter()
        .map(|l| {
            let scored = fit_meta(&fit_set, &l.spec).and_then(|m| {
                let p = predict_cate(&m, &eval_x)?;
                let core = match &eval_mask {
                    Some(mask) => Some(core_pehe(&p, &eval_tau, mask)?),
                    None => None,
                };
                Ok((pehe(&p, &eval_tau)?, core, ate_bias(&p, &eval_tau)?))
            });
            match scored {
                Ok((pehe, core_pehe, ate_bias)) => TrialRow {
                    trial,
                    seed,
                    learner: l.name.clone(),
                    pehe,
                    core_pehe,
                    ate_bias,
                    error: None,
                },
                Err(e) => nan_row(trial, seed, &l.name, e.to_string()),
            }
        })
        .collect()
}

/// Run `n_trials` trials; trial `t` uses seed `base_seed + t` for `make_data`.
/// Rows are ordered by trial, then learner, regardless of scheduling.
pub fn run_trials<F>(
    scenario: &str,
    rate: Option<f64>,
    base_seed: u64,
    n_trials: usize,
    learners: &[NamedLearner],
    make_data: F,
) -> Result<EvalReport>
where
    F: Fn(u64) -> Result<CausalDataset> + Sync,
{
    ensure!(n_trials >= 1, "n_trials must be at least 1");
    ensure!(!learners.is_empty(), "no learners given");
    let rows: Vec<Vec<TrialRow>> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let seed = base_seed.wrapping_add(t as u64);
            match make_data(seed) {
                Ok(d) => evaluate_dataset(&d, learners, t, seed),
                Err(e) => learners
                    .iter()
                    .map(|l| nan_row(t, seed, &l.name, format!("data generation: {e}")))
                    .collect(),
            }
        })
        .collect();
    Ok(EvalReport::from_rows(
        scenario,
        rate,
        rows.into_iter().flatten().collect(),
    ))
}

pub fn run_scenario(
    spec: &ScenarioSpec,
    learners: &[NamedLearner],
    n_trials: usize,
) -> Result<EvalReport> {
    spec.validate()?;
    run_trials(
        "synthetic",
        Some(spec.contamination.rate),
        spec.seed,
        n_trials,
        learners,
        |seed| generate_synthetic(&ScenarioSpec { seed, ..*spec }),
    )
}

/// Repeated draws of the semi-synthetic DGP on fixed covariates.
pub fn run_semi_synthetic(
    features: &FeatureMatrix,
    spec: &SemiSyntheticSpec,
    learners: &[NamedLearner],
    n_trials: usize,
) -> Result<EvalReport> {
    spec.validate()?;
    run_trials(
        "semi_synthetic",
        None,
        spec.seed,
        n_trials,
        learners,
        |seed| {
            apply_semi_synthetic_dgp(
                features,
                &SemiSyntheticSpec {
                    seed,
                    ..spec.clone()
                },
            )
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub learner: String,
    pub mean_pehe: f64,
    pub mean_core_pehe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<EvalReport>,
    pub table: Vec<SweepRow>,
}

impl SweepResult {
    pub fn mean_pehe(&self, rate: f64, learner: &str) -> Option<f64> {
        self.table
            .iter()
            .find(|r| r.rate == rate && r.learner == learner)
            .map(|r| r.mean_pehe)
    }
}

pub fn contamination_sweep(
    base: &ScenarioSpec,
    rates: &[f64],
    learners: &[NamedLearner],
    n_trials: usize,
) -> Result<SweepResult> {
    ensure!(!rates.is_empty(), "no contamination rates given");
    for &r in rates {
        ensure!(
            (0.0..1.0).contains(&r),
            "contamination rate {r} outside [0, 1)"
        );
    }
    let mut reports = Vec::with_capacity(rates.len());
    let mut table = Vec::new();
    for &rate in rates {
        let mut spec = *base;
        spec.contamination.rate = rate;
        let report = run_scenario(&spec, learners, n_trials)?;
        for s in &report.aggregated {
            table.push(SweepRow {
                rate,
                learner: s.learner.clone(),
                mean_pehe: s.pehe.mean,
                mean_core_pehe: s.core_pehe.map(|c| c.mean),
            });
        }
        reports.push(report);
    }
    Ok(SweepResult { reports, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearRow {
    pub magnitude: f64,
    pub learner: String,
    /// Mean over control units of `τ̂_ξ(x) − τ̂_0(x)`.
    pub shift: f64,
    /// Mean over control units of `|τ̂_ξ(x) − τ̂_0(x)|`.
    pub abs_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearReport {
    pub unit_index: usize,
    pub n_treated: usize,
    pub rows: Vec<SmearRow>,
}

impl SmearReport {
    pub fn shift(&self, magnitude: f64, learner: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.magnitude == magnitude && r.learner == learner)
            .map(|r| r.shift)
    }
}

/// Inject a single outlier of each magnitude into one treated unit and
/// measure how the CATE predictions on the control units move. The unit is
/// `unit_index`, or the first treated unit when `None`.
pub fn smearing_study(
    spec: &ScenarioSpec,
    magnitudes: &[f64],
    learners: &[NamedLearner],
    unit_index: Option<usize>,
) -> Result<SmearReport> {
    ensure!(
        magnitudes.contains(&0.0),
        "magnitudes must include the 0 baseline"
    );
    ensure!(!learners.is_empty(), "no learners given");
    let clean = generate_synthetic(spec)?;
    let unit = match unit_index {
        Some(u) => u,
        None => *clean
            .treated_indices()
            .first()
            .ok_or_else(|| Error::Validation("scenario has no treated units".into()))?,
    };
    let controls = clean.control_indices();
    let control_x = clean.features.select_rows(&controls);

    let fit_at = |l: &NamedLearner, xi: f64| -> Result<Vec<f64>> {
        let d = if xi == 0.0 {
            clean.clone()
        } else {
            inject_outlier(&clean, unit, xi)?
        };
        predict_cate(&fit_meta(&d, &l.spec)?, &control_x)
    };
    let per_learner: Vec<Vec<SmearRow>> = learners
        .par_iter()
        .map(|l| {
            let base = fit_at(l, 0.0)?;
            magnitudes
                .iter()
                .map(|&xi| {
                    let (shift, abs_shift) = if xi == 0.0 {
                        (0.0, 0.0)
                    } else {
                        let p = fit_at(l, xi)?;
                        let diff: Vec<f64> = p.iter().zip(&base).map(|(a, b)| a - b).collect();
                        (
                            mean(&diff),
                            diff.iter().map(|d| d.abs()).sum::<f64>() / diff.len() as f64,
                        )
                    };
                    Ok(SmearRow {
                        magnitude: xi,
                        learner: l.name.clone(),
                        shift,
                        abs_shift,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(magnitudes.len() * learners.len());
    for &xi in magnitudes {
        for lr in &per_learner {
            rows.extend(lr.iter().filter(|r| r.magnitude == xi).cloned());
        }
    }
    Ok(SmearReport {
        unit_index: unit,
        n_treated: clean.n_treated(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mu_mse: f64,
    pub mu_rx: f64,
    pub y: f64,
    pub w: bool,
    pub is_outlier: bool,
}

/// Fit the treated-arm response with squared error and with the γ-Welsch loss.
pub fn fit_response_curves(
    data: &CausalDataset,
    config: &BoostConfig,
    gamma: f64,
) -> Result<(BoostedEnsemble, BoostedEnsemble)> {
    let idx = data.treated_indices();
    ensure!(!idx.is_empty(), "no treated units to fit");
    let x = data.features.select_rows(&idx);
    let y: Vec<f64> = idx.iter().map(|&i| data.outcome[i]).collect();
    let (mse, rx) = rayon::join(
        || fit_boosted(&x, &y, &LossSpec::squared(), config),
        || fit_boosted(&x, &y, &LossSpec::gamma_welsch(gamma), config),
    );
    Ok((mse?, rx?))
}

/// Evaluate both curves at every unit of a 1-D dataset.
pub fn curve_points(
    mse: &BoostedEnsemble,
    rx: &BoostedEnsemble,
    data: &CausalDataset,
) -> Result<Vec<CurvePoint>> {
    ensure!(
        data.features.cols() == 1,
        "curve export needs a 1-D grid, got {} columns",
        data.features.cols()
    );
    let a = mse.predict(&data.features)?;
    let b = rx.predict(&data.features)?;
    Ok((0..data.len())
        .map(|i| CurvePoint {
            x: data.features.get(i, 0),
            mu_mse: a[i],
            mu_rx: b[i],
            y: data.outcome[i],
            w: data.treatment[i],
            is_outlier: data.outlier_mask.as_ref().is_some_and(|m| m[i]),
        })
        .collect())
}

/// CSV with header `x,mu_mse,mu_rx,y,w,is_outlier`; flags are 0/1.
pub fn emit_curve_data(
    mse: &BoostedEnsemble,
    rx: &BoostedEnsemble,
    data: &CausalDataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let points = curve_points(mse, rx, data)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    let io = |e: csv::Error| Error::malformed(path, e);
    w.write_record(["x", "mu_mse", "mu_rx", "y", "w", "is_outlier"])
        .map_err(io)?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.mu_mse.to_string(),
            p.mu_rx.to_string(),
            p.y.to_string(),
            u8::from(p.w).to_string(),
            u8::from(p.is_outlier).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|r| r.to_string()).unwrap_or_default()
}

/// Long format: `scenario,rate,seed,learner,metric,value`. Failed trials get
/// metric `error` with an empty value.
pub fn write_reports_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    let io = |e: csv::Error| Error::malformed(path, e);
    w.write_record(["scenario", "rate", "seed", "learner", "metric", "value"])
        .map_err(io)?;
    for rep in reports {
        let rate = fmt_opt(rep.rate);
        for r in &rep.per_trial {
            let seed = r.seed.to_string();
            let mut metrics = vec![];
            if r.error.is_some() {
                metrics.push(("error", String::new()));
            } else {
                metrics.push(("pehe", r.pehe.to_string()));
                if let Some(c) = r.core_pehe {
                    metrics.push(("core_pehe", c.to_string()));
                }
                metrics.push(("ate_bias", r.ate_bias.to_string()));
            }
            for (m, v) in metrics {
                w.write_record([rep.scenario.as_str(), &rate, &seed, &r.learner, m, &v])
                    .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::malformed(path, e))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_smear_csv(report: &SmearReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::malformed(path, e))?;
    let io = |e: csv::Error| Error::malformed(path, e);
    w.write_record(["magnitude", "learner", "shift", "abs_shift"])
        .map_err(io)?;
    for r in &report.rows {
        w.write_record([
            r.magnitude.to_string(),
            r.learner.clone(),
            r.shift.to_string(),
            r.abs_shift.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
