//! Loss family for the boosted learners: squared error, Huber, and the
//! γ-divergence objective, which under a Gaussian core model reduces to the
//! Welsch loss
//!
//! ```text
//! L_γ(r) = -(1/γ) Σ exp(-γ r² / (2σ̂²))
//! ```
//!
//! Every loss exposes a *working gradient* and an *MM weight*. Boosting fits
//! each tree to the residual `r` with the MM weight as instance weight, which
//! minimises the half-quadratic majorizer of the loss at the current fit.
//!
//! The scale σ̂ is a fixed anchor: [`mad_scale`] of the residuals after an
//! intercept-only (median) fit, floored at [`SCALE_FLOOR`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::stats::median;

/// Gaussian consistency constant for the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Lower bound on any scale estimate; keeps σ̂ from imploding to zero.
pub const SCALE_FLOOR: f64 = 1e-8;

pub const DEFAULT_GAMMA: f64 = 0.2;

/// Documented admissible range for γ.
pub const GAMMA_RANGE: (f64, f64) = (0.1, 1.0);

/// Classical 95%-efficiency Huber constant, in units of σ̂.
pub const DEFAULT_HUBER_MULTIPLIER: f64 = 1.345;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    SquaredError,
    Huber { delta_multiplier: f64 },
    GammaWelsch { gamma: f64 },
}

/// How the scale anchor σ̂ is obtained during a boosting fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalePolicy {
    /// MAD of the residuals of the intercept-only fit, held for all rounds.
    #[default]
    FixedFromInit,
    /// Recompute MAD of the current residuals every `k` rounds.
    RefreshEvery(usize),
    /// Use `LossSpec::scale` verbatim.
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// σ̂. Resolved by the boosting fit unless the policy is [`ScalePolicy::Given`].
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(default)]
    pub scale_policy: ScalePolicy,
}

fn unit_scale() -> f64 {
    1.0
}

impl LossSpec {
    pub fn squared() -> Self {
        Self::from_kind(LossKind::SquaredError)
    }

    pub fn huber() -> Self {
        Self::huber_with(DEFAULT_HUBER_MULTIPLIER)
    }

    pub fn huber_with(delta_multiplier: f64) -> Self {
        Self::from_kind(LossKind::Huber { delta_multiplier })
    }

    pub fn gamma_welsch(gamma: f64) -> Self {
        Self::from_kind(LossKind::GammaWelsch { gamma })
    }

    fn from_kind(kind: LossKind) -> Self {
        LossSpec {
            kind,
            scale: 1.0,
            scale_policy: ScalePolicy::FixedFromInit,
        }
    }

    /// Same loss with the scale fixed to `scale` (floored).
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale.max(SCALE_FLOOR);
        self
    }

    pub fn is_robust(&self) -> bool {
        !matches!(self.kind, LossKind::SquaredError)
    }

    pub fn welsch(&self) -> Option<Welsch> {
        match self.kind {
            LossKind::GammaWelsch { gamma } => Some(Welsch {
                gamma,
                scale: self.scale,
            }),
            _ => None,
        }
    }

    /// Huber threshold δ = multiplier · σ̂.
    pub fn huber_delta(&self) -> Option<f64> {
        match self.kind {
            LossKind::Huber { delta_multiplier } => Some(delta_multiplier * self.scale),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.scale.is_finite() && self.scale > 0.0,
            "loss scale must be positive, got {}",
            self.scale
        );
        match self.kind {
            LossKind::SquaredError => {}
            LossKind::Huber { delta_multiplier } => ensure!(
                delta_multiplier.is_finite() && delta_multiplier > 0.0,
                "huber delta_multiplier must be positive, got {delta_multiplier}"
            ),
            LossKind::GammaWelsch { gamma } => ensure!(
                gamma.is_finite() && gamma > 0.0,
                "gamma must be positive, got {gamma}"
            ),
        }
        if let ScalePolicy::RefreshEvery(k) = self.scale_policy {
            ensure!(k > 0, "scale refresh period must be at least 1");
        }
        Ok(())
    }

    /// Per-point loss ρ(r).
    pub fn point_loss(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::SquaredError => 0.5 * r * r,
            LossKind::Huber { delta_multiplier } => {
                let delta = delta_multiplier * self.scale;
                let a = r.abs();
                if a <= delta {
                    0.5 * r * r
                } else {
                    delta * (a - 0.5 * delta)
                }
            }
            LossKind::GammaWelsch { gamma } => {
                -welsch_weight(
                    r,
                    &Welsch {
                        gamma,
                        scale: self.scale,
                    },
                ) / gamma
            }
        }
    }

    /// Σ ρ(rᵢ).
    pub fn total_loss(&self, residuals: &[f64]) -> f64 {
        residuals.iter().map(|&r| self.point_loss(r)).sum()
    }

    /// Exact derivative of ρ(y - F) with respect to the prediction F.
    pub fn loss_derivative(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::GammaWelsch { .. } => {
                let g = gradient_and_weight(r, self);
                g.gradient / (self.scale * self.scale)
            }
            _ => gradient_and_weight(r, self).gradient,
        }
    }
}

/// Parameters of the Welsch form of the γ-divergence loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Welsch {
    pub gamma: f64,
    pub scale: f64,
}

/// `1.4826 · median(|r - median(r)|)`, floored at [`SCALE_FLOOR`].
pub fn mad_scale(residuals: &[f64]) -> Result<f64> {
    ensure!(
        !residuals.is_empty(),
        "mad_scale of an empty residual vector"
    );
    let m = median(residuals);
    let dev: Vec<f64> = residuals.iter().map(|r| (r - m).abs()).collect();
    Ok((MAD_CONSISTENCY * median(&dev)).max(SCALE_FLOOR))
}

/// Bell-shaped weight `exp(-γ r² / (2σ̂²))`, in (0, 1] for finite inputs.
#[inline]
pub fn welsch_weight(r: f64, w: &Welsch) -> f64 {
    (-w.gamma * r * r / (2.0 * w.scale * w.scale)).exp()
}

/// `L_γ = -(1/γ) Σ exp(-γ r² / (2σ̂²))`. Minimum `-N/γ` iff every residual is 0.
pub fn gamma_loss(residuals: &[f64], w: &Welsch) -> f64 {
    -residuals.iter().map(|&r| welsch_weight(r, w)).sum::<f64>() / w.gamma
}

/// Exact `d L_γ / d F` for one point, `-w(r) r / σ̂²`.
pub fn gamma_loss_derivative(r: f64, w: &Welsch) -> f64 {
    -welsch_weight(r, w) * r / (w.scale * w.scale)
}

/// Half-quadratic upper bound of the per-point γ loss anchored at `r0`:
/// `ρ(r0) + w(r0) (r² - r0²) / (2σ̂²)`. Touches ρ at `r = ±r0`.
pub fn gamma_majorizer(r: f64, r0: f64, w: &Welsch) -> f64 {
    let w0 = welsch_weight(r0, w);
    -w0 / w.gamma + 0.5 * w0 * (r * r - r0 * r0) / (w.scale * w.scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradWeight {
    pub gradient: f64,
    pub mm_weight: f64,
}

/// Working gradient and MM weight (the proxy Hessian) at residual `r = y - F`.
///
/// The gradient is `-mm_weight · r` for every kind, so `-gradient / mm_weight`
/// recovers the residual that the tree is fitted to. For the γ loss it is the
/// exact derivative multiplied by σ̂².
#[inline]
pub fn gradient_and_weight(r: f64, spec: &LossSpec) -> GradWeight {
    match spec.kind {
        LossKind::SquaredError => GradWeight {
            gradient: -r,
            mm_weight: 1.0,
        },
        LossKind::Huber { delta_multiplier } => {
            let delta = delta_multiplier * spec.scale;
            let a = r.abs();
            let mm_weight = if a <= delta { 1.0 } else { delta / a };
            GradWeight {
                gradient: -r.clamp(-delta, delta),
                mm_weight,
            }
        }
        LossKind::GammaWelsch { gamma } => {
            let w = welsch_weight(
                r,
                &Welsch {
                    gamma,
                    scale: spec.scale,
                },
            );
            GradWeight {
                gradient: -w * r,
                mm_weight: w,
            }
        }
    }
}
