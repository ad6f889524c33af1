//! Interval bound propagation under ℓ∞ input perturbations, plus bounds on
//! softmax probabilities and diagonal-Gaussian densities.
//!
//! The traced `*_vars` functions are the implementation; the plain functions
//! run them on a scratch tape with constant inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{as_batch, BoundVars, Dense, Head, HeadValues, Network};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Elementwise interval `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTensor {
    lower: Tensor,
    upper: Tensor,
}

impl IntervalTensor {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(Error::ShapeMismatch {
                op: "interval",
                left: lower.shape().to_vec(),
                right: upper.shape().to_vec(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower.data()[i] > upper.data()[i]) {
            return Err(Error::param(
                "interval",
                format!(
                    "lower {} exceeds upper {} at index {i}",
                    lower.data()[i],
                    upper.data()[i]
                ),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Zero-width interval around `x`.
    pub fn point(x: Tensor) -> Self {
        Self {
            lower: x.clone(),
            upper: x,
        }
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn width(&self) -> Tensor {
        self.upper.zip_map(&self.lower, |u, l| u - l)
    }

    pub fn contains(&self, x: &Tensor) -> bool {
        x.shape() == self.lower.shape()
            && x.data()
                .iter()
                .zip(self.lower.data().iter().zip(self.upper.data()))
                .all(|(v, (l, u))| l <= v && v <= u)
    }
}

/// Bounds on Q-values: `V(s) + A̲` and `V(s) + Ā`.
pub type QBounds = IntervalTensor;

/// Density bounds of a diagonal Gaussian whose mean lies in a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBounds {
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub sigma_diag: Vec<f64>,
    pub d_lower: f64,
    pub d_upper: f64,
    pub pi_lower: f64,
    pub pi_upper: f64,
}

fn check_eps(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    Ok(())
}

/// Traced input box `[x − ε, x + ε]`, optionally clamped to `range`.
pub fn ibp_input_vars(
    tape: &mut Tape,
    x: Var,
    epsilon: f64,
    range: Option<(f64, f64)>,
) -> Result<(Var, Var)> {
    check_eps(epsilon)?;
    let mut l = tape.shift(x, -epsilon);
    let mut u = tape.shift(x, epsilon);
    if let Some((lo, hi)) = range {
        l = tape.clip(l, lo, hi);
        u = tape.clip(u, lo, hi);
    }
    Ok((l, u))
}

pub fn ibp_input(
    observation: &Tensor,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<IntervalTensor> {
    let mut tape = Tape::new();
    let x = tape.constant(observation.clone());
    let (l, u) = ibp_input_vars(&mut tape, x, epsilon, clip_range)?;
    IntervalTensor::new(tape.value(l).clone(), tape.value(u).clone())
}

/// Traced affine bound in center/radius form.
pub fn ibp_dense_vars(
    tape: &mut Tape,
    lower: Var,
    upper: Var,
    w: Var,
    b: Option<Var>,
) -> Result<(Var, Var)> {
    let s = tape.add(lower, upper)?;
    let c = tape.scale(s, 0.5);
    let d = tape.sub(upper, lower)?;
    let r = tape.scale(d, 0.5);
    let oc = tape.dense(c, w, b)?;
    let aw = tape.abs(w);
    let or = tape.dense(r, aw, None)?;
    Ok((tape.sub(oc, or)?, tape.add(oc, or)?))
}

pub fn ibp_dense(bounds: &IntervalTensor, weights: &Tensor, bias: &Tensor) -> Result<IntervalTensor> {
    let mut tape = Tape::new();
    let l = tape.constant(bounds.lower.clone());
    let u = tape.constant(bounds.upper.clone());
    let w = tape.constant(weights.clone());
    let b = tape.constant(bias.clone());
    let (ol, ou) = ibp_dense_vars(&mut tape, l, u, w, Some(b))?;
    IntervalTensor::new(tape.value(ol).clone(), tape.value(ou).clone())
}

pub fn ibp_relu(bounds: &IntervalTensor) -> IntervalTensor {
    IntervalTensor {
        lower: crate::tape::relu(&bounds.lower),
        upper: crate::tape::relu(&bounds.upper),
    }
}

/// Unit roundoff of `f64`.
const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

/// `γ_n = n·u / (1 − n·u)`, the relative error bound of an `n`-term dot product.
fn gamma(n: usize) -> f64 {
    let nu = n as f64 * UNIT_ROUNDOFF;
    nu / (1.0 - nu)
}

/// Affine bound of one layer for one row, widened by the worst-case rounding
/// error of both this computation and a floating-point evaluation of the
/// layer anywhere in the box, then rounded outward.
fn dense_outward(layer: &Dense, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = lo.len();
    let c: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let r: Vec<f64> = lo
        .iter()
        .zip(hi)
        .zip(&c)
        .map(|((l, h), c)| (h - c).max(c - l).next_up())
        .collect();
    let (w, b) = (layer.weight.data(), layer.bias.data());
    let g = 2.0 * gamma(n + 2);
    let mut out_lo = Vec::with_capacity(layer.outputs());
    let mut out_hi = Vec::with_capacity(layer.outputs());
    for o in 0..layer.outputs() {
        let row = &w[o * n..(o + 1) * n];
        let (mut yc, mut yr, mut mag) = (b[o], 0.0, b[o].abs());
        for i in 0..n {
            yc += row[i] * c[i];
            yr += row[i].abs() * r[i];
            mag += row[i].abs() * (c[i].abs() + r[i]);
        }
        let slack = g * mag + (n + 2) as f64 * f64::MIN_POSITIVE;
        out_lo.push((yc - yr - slack).next_down());
        out_hi.push((yc + yr + slack).next_up());
    }
    (out_lo, out_hi)
}

/// Output bounds of the network's primary head for a batch (or a single observation).
///
/// Dueling heads give sound Q bounds (value and advantage both perturbed),
/// softmax heads logit bounds, Gaussian heads mean bounds. Every output of
/// the network at any admissible `s + δ` lies inside the returned interval,
/// including its floating-point rounding: each layer is widened by a
/// rigorous bound on the rounding error and rounded outward. The traced
/// bounds used for training skip this widening, which is far below any
/// training-relevant scale.
pub fn ibp_network(
    net: &Network,
    observation: &Tensor,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<IntervalTensor> {
    let single = observation.rank() == 1;
    let obs = as_batch(observation)?;
    if obs.cols() != net.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "ibp_network",
            left: vec![net.input_dim()],
            right: vec![obs.cols()],
        });
    }
    let input = ibp_input(&obs, epsilon, clip_range)?;
    let (mut lo_all, mut hi_all) = (Vec::new(), Vec::new());
    for row in 0..obs.rows() {
        let (mut lo, mut hi) = (input.lower.row(row).to_vec(), input.upper.row(row).to_vec());
        for layer in net.trunk() {
            let (l, h) = dense_outward(layer, &lo, &hi);
            lo = l.into_iter().map(|v| v.max(0.0)).collect();
            hi = h.into_iter().map(|v| v.max(0.0)).collect();
        }
        let (l, h) = match net.head() {
            Head::DuelingQ { value, advantage } => {
                let (vl, vh) = dense_outward(value, &lo, &hi);
                let (al, ah) = dense_outward(advantage, &lo, &hi);
                // Rounding is monotone, so fl(V̲ + A̲) ≤ fl(v + a) needs no slack.
                (
                    al.iter().map(|a| vl[0] + a).collect(),
                    ah.iter().map(|a| vh[0] + a).collect(),
                )
            }
            Head::Softmax { logits: d, .. } | Head::Gaussian { mean: d, .. } | Head::Linear { out: d } => {
                dense_outward(d, &lo, &hi)
            }
        };
        lo_all.extend(l);
        hi_all.extend(h);
    }
    let k = lo_all.len() / obs.rows();
    let shape = if single { vec![k] } else { vec![obs.rows(), k] };
    IntervalTensor::new(Tensor::new(shape.clone(), lo_all)?, Tensor::new(shape, hi_all)?)
}

/// Traced network bounds for a `[batch, input]` observation matrix: returns
/// the clean head output alongside the perturbed bounds.
pub fn network_bounds_vars(
    tape: &mut Tape,
    net: &Network,
    vars: &crate::nn::NetVars,
    x: Var,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<(crate::nn::HeadVars, BoundVars)> {
    let clean = net.forward_vars(tape, vars, x)?;
    let (l, u) = ibp_input_vars(tape, x, epsilon, clip_range)?;
    let b = net.ibp_vars(tape, vars, &clean, l, u)?;
    Ok((clean, b))
}

/// One-hot `[rows, k]` mask with a 1 at `actions[r]` in each row.
pub(crate) fn one_hot(actions: &[usize], k: usize) -> Result<Tensor> {
    let mut data = vec![0.0; actions.len() * k];
    for (r, &a) in actions.iter().enumerate() {
        if a >= k {
            return Err(Error::ActionOutOfRange { index: a, count: k });
        }
        data[r * k + a] = 1.0;
    }
    Ok(Tensor::from_raw(vec![actions.len(), k], data))
}

/// Traced `(log π̲(a), log π̄(a))` per row from `[batch, k]` logit bounds.
///
/// The upper bound evaluates softmax at `z̄` for the chosen action and `z̲`
/// elsewhere; the lower bound swaps the roles.
pub fn log_prob_bounds_vars(
    tape: &mut Tape,
    lower: Var,
    upper: Var,
    actions: &[usize],
) -> Result<(Var, Var)> {
    let k = tape.value(lower).cols();
    if k < 2 {
        return Err(Error::param("logits", "need at least two actions"));
    }
    let mask = tape.constant(one_hot(actions, k)?);
    let diff = tape.sub(upper, lower)?;
    let md = tape.mul(diff, mask)?;
    let hi_mix = tape.add(lower, md)?;
    let lo_mix = tape.sub(upper, md)?;
    let lo_ls = tape.log_softmax(lo_mix);
    let hi_ls = tape.log_softmax(hi_mix);
    Ok((tape.gather(lo_ls, actions)?, tape.gather(hi_ls, actions)?))
}

/// `(π̲(a), π̄(a))` from logit bounds of a single state.
pub fn softmax_prob_bounds(logit_bounds: &IntervalTensor, action: usize) -> Result<(f64, f64)> {
    let k = logit_bounds.lower.len();
    if k < 2 {
        return Err(Error::param("logits", "need at least two actions"));
    }
    if action >= k {
        return Err(Error::ActionOutOfRange {
            index: action,
            count: k,
        });
    }
    let mut tape = Tape::new();
    let l = tape.constant(logit_bounds.lower.reshape(vec![1, k])?);
    let u = tape.constant(logit_bounds.upper.reshape(vec![1, k])?);
    let (lo, hi) = log_prob_bounds_vars(&mut tape, l, u, &[action])?;
    Ok((tape.value(lo).item().exp(), tape.value(hi).item().exp()))
}

/// Probability bounds for every action of one state.
pub fn softmax_prob_bounds_all(logit_bounds: &IntervalTensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = logit_bounds.lower.len();
    let mut lo = Vec::with_capacity(k);
    let mut hi = Vec::with_capacity(k);
    for a in 0..k {
        let (l, h) = softmax_prob_bounds(logit_bounds, a)?;
        lo.push(l);
        hi.push(h);
    }
    Ok((lo, hi))
}

fn inverse_variance(tape: &mut Tape, log_std: Var, rows: usize) -> Var {
    let s = tape.scale(log_std, -2.0);
    let iv = tape.exp(s);
    tape.repeat_rows(iv, rows)
}

fn log_normalizer(tape: &mut Tape, log_std: Var, rows: usize) -> Var {
    let k = tape.value(log_std).len() as f64;
    let rep = tape.repeat_rows(log_std, rows);
    let s = tape.sum_cols(rep);
    tape.shift(s, 0.5 * k * LN_2PI)
}

/// `log N(a; μ, diag(σ²))` per row. `mean` and `actions` are `[batch, k]`,
/// `log_std` is `[k]`.
pub fn gaussian_log_density_vars(tape: &mut Tape, mean: Var, log_std: Var, actions: Var) -> Result<Var> {
    let rows = tape.value(mean).rows();
    let z = tape.sub(actions, mean)?;
    let sq = tape.square(z);
    let iv = inverse_variance(tape, log_std, rows);
    let w = tape.mul(sq, iv)?;
    let d = tape.sum_cols(w);
    let half = tape.scale(d, -0.5);
    let norm = log_normalizer(tape, log_std, rows);
    tape.sub(half, norm)
}

/// Traced `(log π̲, log π̄)` for a Gaussian whose mean lies in `[mean_lower, mean_upper]`.
pub fn gaussian_log_density_bounds_vars(
    tape: &mut Tape,
    mean_lower: Var,
    mean_upper: Var,
    log_std: Var,
    actions: Var,
) -> Result<(Var, Var)> {
    let rows = tape.value(mean_lower).rows();
    let iv = inverse_variance(tape, log_std, rows);
    let norm = log_normalizer(tape, log_std, rows);

    // d̄: the farther endpoint in every dimension.
    let zl = tape.sub(actions, mean_lower)?;
    let zu = tape.sub(actions, mean_upper)?;
    let sl = tape.square(zl);
    let su = tape.square(zu);
    let far = tape.max(sl, su)?;
    let wf = tape.mul(far, iv)?;
    let d_upper = tape.sum_cols(wf);

    // d̲: distance from a to the box, zero inside.
    let below = tape.sub(mean_lower, actions)?;
    let below = tape.relu(below);
    let above = tape.relu(zu);
    let dist = tape.add(below, above)?;
    let sn = tape.square(dist);
    let wn = tape.mul(sn, iv)?;
    let d_lower = tape.sum_cols(wn);

    let lo = tape.scale(d_upper, -0.5);
    let lo = tape.sub(lo, norm)?;
    let hi = tape.scale(d_lower, -0.5);
    let hi = tape.sub(hi, norm)?;
    Ok((lo, hi))
}

pub fn gaussian_density_bounds(
    mu_bounds: &IntervalTensor,
    sigma_diag: &[f64],
    action: &[f64],
) -> Result<GaussianBounds> {
    let k = mu_bounds.lower.len();
    if sigma_diag.len() != k || action.len() != k {
        return Err(Error::ShapeMismatch {
            op: "gaussian_density_bounds",
            left: vec![k],
            right: vec![sigma_diag.len(), action.len()],
        });
    }
    if let Some(&s) = sigma_diag.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::param("sigma_diag", format!("must be positive, got {s}")));
    }
    let mut d_lower = 0.0;
    let mut d_upper = 0.0;
    for i in 0..k {
        let (l, u, a) = (mu_bounds.lower.data()[i], mu_bounds.upper.data()[i], action[i]);
        let var = sigma_diag[i] * sigma_diag[i];
        let (tl, tu) = ((a - l) * (a - l), (a - u) * (a - u));
        d_upper += tl.max(tu) / var;
        if a < l || a > u {
            d_lower += tl.min(tu) / var;
        }
    }
    let log_norm = 0.5 * k as f64 * LN_2PI + sigma_diag.iter().map(|s| s.ln()).sum::<f64>();
    Ok(GaussianBounds {
        mu_lower: mu_bounds.lower.data().to_vec(),
        mu_upper: mu_bounds.upper.data().to_vec(),
        sigma_diag: sigma_diag.to_vec(),
        d_lower,
        d_upper,
        pi_lower: (-0.5 * d_upper - log_norm).exp(),
        pi_upper: (-0.5 * d_lower - log_norm).exp(),
    })
}

/// Outcome of a sampled containment check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub observations: usize,
    /// Perturbed observations evaluated.
    pub samples: usize,
    /// Output coordinates that fell outside their interval.
    pub violations: usize,
    /// Largest distance by which an output escaped its interval (0 if none).
    pub max_excess: f64,
}

impl ContainmentReport {
    pub fn merge(&mut self, other: &ContainmentReport) {
        self.observations += other.observations;
        self.samples += other.samples;
        self.violations += other.violations;
        self.max_excess = self.max_excess.max(other.max_excess);
    }
}

/// Checks [`ibp_network`] against the network's output at `samples`
/// perturbed copies of each observation. Half the perturbations are uniform
/// in the ε-box and half are random corners of it; all are clipped to
/// `clip_range` like the bounds are. Containment is checked exactly.
pub fn sampled_containment(
    net: &Network,
    observations: &[Vec<f64>],
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<ContainmentReport> {
    let mut report = ContainmentReport::default();
    for obs in observations {
        let b = ibp_network(net, &Tensor::vector(obs.clone())?, epsilon, clip_range)?;
        let d = obs.len();
        let mut data = Vec::with_capacity(samples * d);
        for i in 0..samples {
            for &x in obs {
                let delta = if i % 2 == 0 {
                    rng.gen_range(-epsilon..=epsilon)
                } else if rng.gen::<bool>() {
                    epsilon
                } else {
                    -epsilon
                };
                let mut v = x + delta;
                if let Some((lo, hi)) = clip_range {
                    v = v.clamp(lo, hi);
                }
                data.push(v);
            }
        }
        let out = net.forward(&Tensor::matrix(samples, d, data)?)?;
        let y = match &out {
            HeadValues::Q { q, .. } => q,
            HeadValues::Policy { logits, .. } => logits,
            HeadValues::Gaussian { mean, .. } => mean,
            HeadValues::Linear { out } => out,
        };
        let k = b.lower().len();
        for r in 0..samples {
            for (j, &v) in y.row(r).iter().enumerate().take(k) {
                let (lo, hi) = (b.lower().data()[j], b.upper().data()[j]);
                if !(lo <= v && v <= hi) {
                    report.violations += 1;
                    let excess = if v.is_nan() { f64::INFINITY } else { (lo - v).max(v - hi) };
                    report.max_excess = report.max_excess.max(excess);
                }
            }
        }
        report.observations += 1;
        report.samples += samples;
    }
    Ok(report)
}
