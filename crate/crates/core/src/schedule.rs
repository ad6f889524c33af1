//! Perturbation-radius curricula and exploration schedules.
//!
//! Let `T = ramp_steps`, `u = t/T` and `f` the smoothing/exponential fraction.
//!
//! **SmoothedLinear** is a quadratic ease-in joined C¹ to a straight line:
//!
//! ```text
//! ε(u) = ε_max · u² / (f(2 − f))          for u ≤ f
//! ε(u) = ε_max · (u − f/2) / (1 − f/2)    for f < u ≤ 1
//! ```
//!
//! Both pieces take the value `ε_max·f/(2 − f)` and slope `2ε_max/((2 − f)T)`
//! at `u = f`. (The bare `u²/f` ease-in meets a line to `ε_max` in value but
//! not in slope, so the normalisation above is used instead.)
//!
//! **ExpThenLinear** grows as `ε_start·e^{λt}` up to `t_j = fT` and continues
//! along the tangent line, which must reach `ε_max` at `T`:
//! `ε_start·e^{λ t_j}·(1 + λ(T − t_j)) = ε_max`. The left side is increasing
//! in `λ`, so `λ` is found by bisection. The steepest slope is bounded by
//! `ε_max/((1 − f)T)`; `f ≤ 0.9` keeps per-step changes within `10·ε_max/T`.
//!
//! Every schedule is nondecreasing and returns exactly `ε_max` for `t ≥ T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsilonSchedule {
    SmoothedLinear {
        ramp_steps: u64,
        eps_max: f64,
        #[serde(default = "default_smoothing")]
        smoothing: f64,
    },
    ExpThenLinear {
        ramp_steps: u64,
        eps_max: f64,
        #[serde(default = "default_eps_start")]
        eps_start: f64,
        #[serde(default = "default_exp_fraction")]
        exp_fraction: f64,
    },
    Constant {
        eps: f64,
    },
}

fn default_smoothing() -> f64 {
    0.25
}

fn default_eps_start() -> f64 {
    1e-10
}

fn default_exp_fraction() -> f64 {
    0.25
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            EpsilonSchedule::SmoothedLinear {
                ramp_steps,
                eps_max,
                smoothing,
            } => {
                if ramp_steps == 0 {
                    return Err(Error::config("schedule.ramp_steps", "must be positive"));
                }
                if !finite_nonneg(eps_max) {
                    return Err(Error::config("schedule.eps_max", "must be finite and >= 0"));
                }
                if !(0.0..=1.0).contains(&smoothing) {
                    return Err(Error::config("schedule.smoothing", "must lie in [0, 1]"));
                }
            }
            EpsilonSchedule::ExpThenLinear {
                ramp_steps,
                eps_max,
                eps_start,
                exp_fraction,
            } => {
                if ramp_steps == 0 {
                    return Err(Error::config("schedule.ramp_steps", "must be positive"));
                }
                if !(eps_max.is_finite() && eps_start > 0.0 && eps_start < eps_max) {
                    return Err(Error::config(
                        "schedule.eps_start",
                        "need 0 < eps_start < eps_max < inf",
                    ));
                }
                if !(0.0..=0.9).contains(&exp_fraction) {
                    return Err(Error::config("schedule.exp_fraction", "must lie in [0, 0.9]"));
                }
            }
            EpsilonSchedule::Constant { eps } => {
                if !finite_nonneg(eps) {
                    return Err(Error::config("schedule.eps", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn eps_max(&self) -> f64 {
        match *self {
            EpsilonSchedule::SmoothedLinear { eps_max, .. }
            | EpsilonSchedule::ExpThenLinear { eps_max, .. } => eps_max,
            EpsilonSchedule::Constant { eps } => eps,
        }
    }

    pub fn ramp_steps(&self) -> u64 {
        match *self {
            EpsilonSchedule::SmoothedLinear { ramp_steps, .. }
            | EpsilonSchedule::ExpThenLinear { ramp_steps, .. } => ramp_steps,
            EpsilonSchedule::Constant { .. } => 0,
        }
    }

    /// ε at an integer step; negative steps are rejected.
    pub fn epsilon_at(&self, step: i64) -> Result<f64> {
        if step < 0 {
            return Err(Error::param("step", "must be non-negative"));
        }
        self.validate()?;
        Ok(self.at(step as u64))
    }

    /// ε at a step, for schedules already validated.
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            EpsilonSchedule::Constant { eps } => eps,
            EpsilonSchedule::SmoothedLinear {
                ramp_steps,
                eps_max,
                smoothing: f,
            } => {
                if step >= ramp_steps {
                    return eps_max;
                }
                let u = step as f64 / ramp_steps as f64;
                let e = if f > 0.0 && u <= f {
                    eps_max * u * u / (f * (2.0 - f))
                } else {
                    eps_max * (u - 0.5 * f) / (1.0 - 0.5 * f)
                };
                e.min(eps_max)
            }
            EpsilonSchedule::ExpThenLinear {
                ramp_steps,
                eps_max,
                eps_start,
                exp_fraction,
            } => {
                if step >= ramp_steps {
                    return eps_max;
                }
                let t = step as f64;
                let total = ramp_steps as f64;
                let tj = exp_fraction * total;
                let lambda = exp_rate(eps_start, eps_max, tj, total);
                let e = if t <= tj {
                    eps_start * (lambda * t).exp()
                } else {
                    let ej = eps_start * (lambda * tj).exp();
                    ej * (1.0 + lambda * (t - tj))
                };
                e.min(eps_max)
            }
        }
    }
}

/// Solves `ε_s·e^{λ t_j}·(1 + λ(T − t_j)) = ε_max` for `λ > 0`.
fn exp_rate(eps_start: f64, eps_max: f64, tj: f64, total: f64) -> f64 {
    let target = (eps_max / eps_start).ln();
    let g = |l: f64| l * tj + (l * (total - tj)).ln_1p() - target;
    let (mut lo, mut hi) = (0.0, 1.0 / total);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Linear decay of the ε-greedy exploration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl ExplorationSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let u = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * u
    }
}
