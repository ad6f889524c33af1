//! Adversarial losses built from interval bounds, and their combination with
//! the nominal objectives: `L = κ·L_nom + (1 − κ)·L_adv`.
//!
//! Two families:
//!
//! * **Approach One** replaces every network output in the nominal loss by
//!   the bound endpoint that makes the loss largest, giving an upper bound on
//!   the loss at any perturbed observation inside the ε-ball.
//! * **Approach Two** (discrete actions only) penalises overlap between the
//!   taken action's lower bound and every worse action's upper bound,
//!   weighted by how much worse that action is and with margin `c·diff`.
//!
//! Everything that the construction treats as a constant (value gaps,
//! probability gaps, bootstrapped targets, advantages) enters the tape as a
//! constant, so no gradient flows through it.

use serde::{Deserialize, Serialize};

use crate::agents::{
    dqn_nominal_loss_vars, dqn_targets, log_prob_vars, mean_entropy_vars,
    ppo_policy_term_vars, ppo_value_entropy_vars, stack_obs, PpoCoefficients, Transition,
    TrajectoryStep,
};
use crate::bounds::{gaussian_log_density_bounds_vars, ibp_input_vars, log_prob_bounds_vars, one_hot};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{BoundVars, HeadVars, NetVars, Network};
use crate::tape::{Tape, Var};
use crate::tensor::{softmax, Tensor};

/// Which adversarial loss to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    One,
    Two,
    /// Approach Two plus the mirrored term for actions better than the taken one (DQN only).
    TwoSymmetric,
}

/// Training algorithm a loss is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    A3c,
    Ppo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_approach")]
    pub approach: Approach,
}

fn default_kappa() -> f64 {
    0.8
}

fn default_margin() -> f64 {
    0.5
}

fn default_approach() -> Approach {
    Approach::Two
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            margin: default_margin(),
            approach: default_approach(),
        }
    }
}

impl RadialConfig {
    /// Checks ranges and that the approach fits the algorithm and action space.
    pub fn validate(&self, algorithm: Algorithm, discrete: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::config("radial.kappa", "must lie in [0, 1]"));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::config("radial.margin", "must lie strictly between 0 and 1"));
        }
        match (self.approach, algorithm) {
            (Approach::Two | Approach::TwoSymmetric, _) if !discrete => Err(Error::config(
                "radial.approach",
                "approach two inherently relies on the action space being discrete; \
                 use approach one for continuous actions",
            )),
            (Approach::TwoSymmetric, Algorithm::A3c | Algorithm::Ppo) => Err(Error::config(
                "radial.approach",
                "the symmetric variant is defined for DQN only",
            )),
            (Approach::Two, Algorithm::Ppo) => Err(Error::config(
                "radial.approach",
                "PPO supports approach one only",
            )),
            _ => Ok(()),
        }
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::param("kappa", "must lie in [0, 1]"));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    Ok(())
}

/// `κ·nominal + (1 − κ)·adversarial`.
pub fn combined_loss(nominal: f64, adversarial: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(kappa * nominal + (1.0 - kappa) * adversarial)
}

pub fn combined_loss_vars(tape: &mut Tape, nominal: Var, adversarial: Var, kappa: f64) -> Result<Var> {
    check_kappa(kappa)?;
    let n = tape.scale(nominal, kappa);
    let a = tape.scale(adversarial, 1.0 - kappa);
    tape.add(n, a)
}

/// `[rows, k]` matrix whose entry `(r, y)` is `max(0, v[r, a_r] − v[r, y])`,
/// or the mirrored gap `max(0, v[r, y] − v[r, a_r])` when `flip` is set.
fn gap_matrix(values: &Tensor, actions: &[usize], flip: bool) -> Result<Tensor> {
    let (rows, k) = (values.rows(), values.cols());
    if actions.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "gap_matrix",
            left: vec![rows],
            right: vec![actions.len()],
        });
    }
    let mut out = Vec::with_capacity(rows * k);
    for (r, &a) in actions.iter().enumerate() {
        if a >= k {
            return Err(Error::ActionOutOfRange { index: a, count: k });
        }
        let row = values.row(r);
        for &vy in row {
            let d = if flip { vy - row[a] } else { row[a] - vy };
            out.push(d.max(0.0));
        }
    }
    Tensor::matrix(rows, k, out)
}

/// `mean_r Σ_y w[r,y]·max(0, hi[r,y] − lo[r,a_r] + c·m[r,y])` with constant
/// weights `w` and margin gaps `m`.
fn weighted_overlap(
    tape: &mut Tape,
    weight: Tensor,
    margin_gap: Tensor,
    upper: Var,
    lower: Var,
    actions: &[usize],
    c: f64,
) -> Result<Var> {
    let k = tape.value(upper).cols();
    let la = tape.gather(lower, actions)?;
    let la = tape.repeat_cols(la, k);
    let m = tape.constant(margin_gap.map(|g| c * g));
    let gap = tape.sub(upper, la)?;
    let gap = tape.add(gap, m)?;
    let ovl = tape.relu(gap);
    let w = tape.constant(weight);
    let wo = tape.mul(w, ovl)?;
    let per_row = tape.sum_cols(wo);
    Ok(tape.mean(per_row))
}

/// Traced weighted-overlap loss for Q bounds.
///
/// `q` holds the clean Q-values (used only through the constant gaps);
/// `lower`/`upper` are `[batch, k]` bounds in the dueling composition.
/// With `symmetric`, actions better than the taken one add
/// `Q'_diff·max(0, Q̲(y) − Q̄(a) + c·Q'_diff)`.
pub fn dqn_overlap_vars(
    tape: &mut Tape,
    q: &Tensor,
    lower: Var,
    upper: Var,
    actions: &[usize],
    c: f64,
    symmetric: bool,
) -> Result<Var> {
    let diff = gap_matrix(q, actions, false)?;
    let loss = weighted_overlap(tape, diff.clone(), diff, upper, lower, actions, c)?;
    if !symmetric {
        return Ok(loss);
    }
    // Mirrored term: the same helper with the roles of the bounds swapped,
    // giving max(0, Q̲(y) − Q̄(a) + c·Q'_diff).
    let flipped = gap_matrix(q, actions, true)?;
    let mirrored = weighted_overlap(tape, flipped.clone(), flipped, lower, upper, actions, c)?;
    tape.add(loss, mirrored)
}

/// Traced worst-case TD loss
/// `mean(max((B − Q̲(a))², (B − Q̄(a))²) + Σ_{y≠a} max((Q(y) − Q̲(y))², (Q(y) − Q̄(y))²))`.
///
/// `lower`/`upper` must bound the perturbed Q-values themselves (the
/// `sound_*` dueling bounds), otherwise the upper-bound property is lost.
pub fn dqn_worst_case_vars(
    tape: &mut Tape,
    q: Var,
    lower: Var,
    upper: Var,
    actions: &[usize],
    targets: &[f64],
) -> Result<Var> {
    let k = tape.value(q).cols();
    let b = tape.constant(Tensor::vector(targets.to_vec())?);
    let la = tape.gather(lower, actions)?;
    let ua = tape.gather(upper, actions)?;
    let bl = tape.sub(b, la)?;
    let bl = tape.square(bl);
    let bu = tape.sub(b, ua)?;
    let bu = tape.square(bu);
    let bt = tape.max(bl, bu)?;

    let others = tape.constant(one_hot(actions, k)?.map(|v| 1.0 - v));
    let cl = tape.sub(q, lower)?;
    let cl = tape.square(cl);
    let cu = tape.sub(q, upper)?;
    let cu = tape.square(cu);
    let ct = tape.max(cl, cu)?;
    let ct = tape.mul(ct, others)?;
    let ct = tape.sum_cols(ct);

    let per_row = tape.add(bt, ct)?;
    Ok(tape.mean(per_row))
}

/// Traced policy-overlap loss on logits: weights `π_diff`, margin `c·z_diff`.
pub fn policy_overlap_vars(
    tape: &mut Tape,
    logits: &Tensor,
    lower: Var,
    upper: Var,
    actions: &[usize],
    c: f64,
) -> Result<Var> {
    let probs: Vec<f64> = (0..logits.rows()).flat_map(|r| softmax(logits.row(r))).collect();
    let probs = Tensor::matrix(logits.rows(), logits.cols(), probs)?;
    let pi_diff = gap_matrix(&probs, actions, false)?;
    let z_diff = gap_matrix(logits, actions, false)?;
    weighted_overlap(tape, pi_diff, z_diff, upper, lower, actions, c)
}

/// Traced `(log π̲(a), log π̄(a))` per row from policy bounds.
pub fn log_prob_bounds_for(
    tape: &mut Tape,
    clean: &HeadVars,
    bounds: &BoundVars,
    actions: &[&Action],
) -> Result<(Var, Var)> {
    match (clean, bounds) {
        (HeadVars::Policy { .. }, BoundVars::Logits { lower, upper }) => {
            let idx = discrete_indices(actions)?;
            log_prob_bounds_vars(tape, *lower, *upper, &idx)
        }
        (HeadVars::Gaussian { log_std, .. }, BoundVars::Mean { lower, upper }) => {
            let k = tape.value(*lower).cols();
            let mut data = Vec::with_capacity(actions.len() * k);
            for a in actions {
                match a {
                    Action::Continuous(v) if v.len() == k => data.extend_from_slice(v),
                    _ => {
                        return Err(Error::InvalidAction(format!(
                            "expected a {k}-dim continuous action"
                        )))
                    }
                }
            }
            let a = tape.constant(Tensor::matrix(actions.len(), k, data)?);
            gaussian_log_density_bounds_vars(tape, *lower, *upper, *log_std, a)
        }
        _ => Err(Error::Unsupported("policy bounds need a policy head".into())),
    }
}

/// Per-row selection `log π̂ = log π̲` where `A ≥ 0`, else `log π̄`.
fn worst_case_log_prob(tape: &mut Tape, lo: Var, hi: Var, advantages: &[f64]) -> Result<Var> {
    let pos: Vec<f64> = advantages.iter().map(|&a| if a >= 0.0 { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
    let mp = tape.constant(Tensor::vector(pos)?);
    let mn = tape.constant(Tensor::vector(neg)?);
    let l = tape.mul(lo, mp)?;
    let h = tape.mul(hi, mn)?;
    tape.add(l, h)
}

/// Traced worst-case actor-critic loss `mean(A² − A·log π̂(a) − β·H)`, with
/// `A = R − V(s)` and the entropy taken from the unperturbed policy.
pub fn a3c_worst_case_vars(
    tape: &mut Tape,
    clean: &HeadVars,
    bounds: &BoundVars,
    steps: &[&TrajectoryStep],
    beta: f64,
) -> Result<Var> {
    let v = clean
        .value()
        .ok_or_else(|| Error::Unsupported("expected a head with a state value".into()))?;
    let r = tape.constant(Tensor::vector(steps.iter().map(|s| s.return_target).collect())?);
    let adv = tape.sub(r, v)?;
    let adv_c = tape.detach(adv);
    let adv_values = tape.value(adv_c).data().to_vec();
    let value_term = tape.square(adv);
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let (lo, hi) = log_prob_bounds_for(tape, clean, bounds, &actions)?;
    let lp = worst_case_log_prob(tape, lo, hi, &adv_values)?;
    let pg = tape.mul(adv_c, lp)?;
    let per_step = tape.sub(value_term, pg)?;
    let m = tape.mean(per_step);
    let h = mean_entropy_vars(tape, clean)?;
    let bh = tape.scale(h, beta);
    tape.sub(m, bh)
}

/// Traced worst-case PPO loss: the clipped surrogate evaluated at `π̂`
/// (lower bound for non-negative advantages, upper bound otherwise) plus the
/// unperturbed value and entropy terms.
pub fn ppo_worst_case_vars(
    tape: &mut Tape,
    clean: &HeadVars,
    bounds: &BoundVars,
    steps: &[&TrajectoryStep],
    coef: &PpoCoefficients,
) -> Result<Var> {
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let (lo, hi) = log_prob_bounds_for(tape, clean, bounds, &actions)?;
    let adv: Vec<f64> = steps.iter().map(|s| s.advantage).collect();
    let lp = worst_case_log_prob(tape, lo, hi, &adv)?;
    let pol = ppo_policy_term_vars(tape, lp, steps, coef.clip)?;
    let rest = ppo_value_entropy_vars(tape, clean, steps, coef)?;
    tape.add(pol, rest)
}

fn discrete_indices(actions: &[&Action]) -> Result<Vec<usize>> {
    actions
        .iter()
        .map(|a| match a {
            Action::Discrete(i) => Ok(*i),
            Action::Continuous(_) => Err(Error::InvalidAction(
                "continuous action given to a discrete policy".into(),
            )),
        })
        .collect()
}

/// Clean head outputs and ε-ball bounds for a batch of observations.
pub fn forward_with_bounds(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    obs: Tensor,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<(HeadVars, BoundVars)> {
    check_epsilon(epsilon)?;
    let x = tape.constant(obs);
    let clean = net.forward_vars(tape, vars, x)?;
    let (l, u) = ibp_input_vars(tape, x, epsilon, clip_range)?;
    let bounds = net.ibp_vars(tape, vars, &clean, l, u)?;
    Ok((clean, bounds))
}

fn q_parts(clean: &HeadVars, bounds: &BoundVars) -> Result<(Var, Var, Var, Var, Var)> {
    match (clean, bounds) {
        (
            HeadVars::Q { q, .. },
            BoundVars::Q {
                lower,
                upper,
                sound_lower,
                sound_upper,
            },
        ) => Ok((*q, *lower, *upper, *sound_lower, *sound_upper)),
        _ => Err(Error::Unsupported("expected a dueling Q head".into())),
    }
}

/// The nominal and adversarial parts of one training loss, and their combination.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub nominal: Var,
    pub adversarial: Option<Var>,
}

/// Full DQN training loss. Without `radial` (or with `κ = 1`) only the
/// nominal TD loss is built.
#[allow(clippy::too_many_arguments)]
pub fn dqn_training_loss_vars(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    obs: Tensor,
    actions: &[usize],
    targets: &[f64],
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
    radial: Option<&RadialConfig>,
) -> Result<LossVars> {
    let Some(cfg) = radial.filter(|c| c.kappa < 1.0) else {
        let x = tape.constant(obs);
        let head = net.forward_vars(tape, vars, x)?;
        let nominal = dqn_nominal_loss_vars(tape, &head, actions, targets)?;
        return Ok(LossVars {
            total: nominal,
            nominal,
            adversarial: None,
        });
    };
    let (clean, bounds) = forward_with_bounds(tape, net, vars, obs, epsilon, clip_range)?;
    let nominal = dqn_nominal_loss_vars(tape, &clean, actions, targets)?;
    let (q, lo, hi, slo, shi) = q_parts(&clean, &bounds)?;
    let adversarial = match cfg.approach {
        Approach::One => dqn_worst_case_vars(tape, q, slo, shi, actions, targets)?,
        Approach::Two | Approach::TwoSymmetric => {
            let qv = tape.value(q).clone();
            let sym = cfg.approach == Approach::TwoSymmetric;
            dqn_overlap_vars(tape, &qv, lo, hi, actions, cfg.margin, sym)?
        }
    };
    Ok(LossVars {
        total: combined_loss_vars(tape, nominal, adversarial, cfg.kappa)?,
        nominal,
        adversarial: Some(adversarial),
    })
}

/// Full actor-critic training loss.
pub fn a3c_training_loss_vars(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    steps: &[&TrajectoryStep],
    beta: f64,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
    radial: Option<&RadialConfig>,
) -> Result<LossVars> {
    let obs = stack_obs(steps.iter().map(|s| s.obs.as_slice()))?;
    let Some(cfg) = radial.filter(|c| c.kappa < 1.0) else {
        let x = tape.constant(obs);
        let head = net.forward_vars(tape, vars, x)?;
        let (nominal, _) = crate::agents::a3c_nominal_loss_vars(tape, &head, steps, beta)?;
        return Ok(LossVars {
            total: nominal,
            nominal,
            adversarial: None,
        });
    };
    let (clean, bounds) = forward_with_bounds(tape, net, vars, obs, epsilon, clip_range)?;
    let (nominal, _) = crate::agents::a3c_nominal_loss_vars(tape, &clean, steps, beta)?;
    let adversarial = match cfg.approach {
        Approach::One => a3c_worst_case_vars(tape, &clean, &bounds, steps, beta)?,
        Approach::Two | Approach::TwoSymmetric => {
            let (HeadVars::Policy { logits, .. }, BoundVars::Logits { lower, upper }) =
                (&clean, &bounds)
            else {
                return Err(Error::Unsupported(
                    "approach two needs a discrete softmax policy".into(),
                ));
            };
            let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
            let idx = discrete_indices(&actions)?;
            let z = tape.value(*logits).clone();
            policy_overlap_vars(tape, &z, *lower, *upper, &idx, cfg.margin)?
        }
    };
    Ok(LossVars {
        total: combined_loss_vars(tape, nominal, adversarial, cfg.kappa)?,
        nominal,
        adversarial: Some(adversarial),
    })
}

/// Full PPO training loss (worst-case policy for the adversarial part).
pub fn ppo_training_loss_vars(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    steps: &[&TrajectoryStep],
    coef: &PpoCoefficients,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
    radial: Option<&RadialConfig>,
) -> Result<LossVars> {
    let obs = stack_obs(steps.iter().map(|s| s.obs.as_slice()))?;
    let Some(cfg) = radial.filter(|c| c.kappa < 1.0) else {
        let x = tape.constant(obs);
        let head = net.forward_vars(tape, vars, x)?;
        let nominal = crate::agents::ppo_nominal_loss_vars(tape, &head, steps, coef)?;
        return Ok(LossVars {
            total: nominal,
            nominal,
            adversarial: None,
        });
    };
    if cfg.approach != Approach::One {
        return Err(Error::Unsupported("PPO supports approach one only".into()));
    }
    let (clean, bounds) = forward_with_bounds(tape, net, vars, obs, epsilon, clip_range)?;
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let lp = log_prob_vars(tape, &clean, &actions)?;
    let pol = ppo_policy_term_vars(tape, lp, steps, coef.clip)?;
    let rest = ppo_value_entropy_vars(tape, &clean, steps, coef)?;
    let nominal = tape.add(pol, rest)?;
    let adversarial = ppo_worst_case_vars(tape, &clean, &bounds, steps, coef)?;
    Ok(LossVars {
        total: combined_loss_vars(tape, nominal, adversarial, cfg.kappa)?,
        nominal,
        adversarial: Some(adversarial),
    })
}

// Value-level conveniences ------------------------------------------------

fn eval_bounds<T>(
    net: &Network,
    obs: Tensor,
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
    f: impl FnOnce(&mut Tape, &HeadVars, &BoundVars) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let (clean, bounds) = forward_with_bounds(&mut tape, net, &vars, obs, epsilon, clip_range)?;
    f(&mut tape, &clean, &bounds)
}

fn transitions_obs(batch: &[&Transition]) -> Result<Tensor> {
    stack_obs(batch.iter().map(|t| t.obs.as_slice()))
}

/// Weighted Q-overlap loss of `actor` on `batch`.
pub fn dqn_adv_approach2(
    batch: &[&Transition],
    actor: &Network,
    epsilon: f64,
    c: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    dqn_overlap(batch, actor, epsilon, c, clip_range, false)
}

/// Weighted Q-overlap loss with the mirrored term for better actions.
pub fn dqn_adv_approach2_symmetric(
    batch: &[&Transition],
    actor: &Network,
    epsilon: f64,
    c: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    dqn_overlap(batch, actor, epsilon, c, clip_range, true)
}

fn dqn_overlap(
    batch: &[&Transition],
    actor: &Network,
    epsilon: f64,
    c: f64,
    clip_range: Option<(f64, f64)>,
    symmetric: bool,
) -> Result<f64> {
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    eval_bounds(actor, transitions_obs(batch)?, epsilon, clip_range, |tape, clean, b| {
        let (q, lo, hi, _, _) = q_parts(clean, b)?;
        let qv = tape.value(q).clone();
        let l = dqn_overlap_vars(tape, &qv, lo, hi, &actions, c, symmetric)?;
        Ok(tape.value(l).item())
    })
}

/// Worst-case TD loss of `actor` on `batch`, targets from `target`.
#[allow(clippy::too_many_arguments)]
pub fn dqn_adv_approach1(
    batch: &[&Transition],
    actor: &Network,
    target: &Network,
    epsilon: f64,
    gamma: f64,
    double: bool,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let targets = dqn_targets(batch, target, double.then_some(actor), gamma)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    eval_bounds(actor, transitions_obs(batch)?, epsilon, clip_range, |tape, clean, b| {
        let (q, _, _, lo, hi) = q_parts(clean, b)?;
        let l = dqn_worst_case_vars(tape, q, lo, hi, &actions, &targets)?;
        Ok(tape.value(l).item())
    })
}

/// Weighted logit-overlap loss of a softmax policy on a trajectory.
pub fn a3c_adv_approach2(
    steps: &[&TrajectoryStep],
    net: &Network,
    epsilon: f64,
    c: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let idx = discrete_indices(&actions)?;
    let obs = stack_obs(steps.iter().map(|s| s.obs.as_slice()))?;
    eval_bounds(net, obs, epsilon, clip_range, |tape, clean, b| {
        let (HeadVars::Policy { logits, .. }, BoundVars::Logits { lower, upper }) = (clean, b)
        else {
            return Err(Error::Unsupported("approach two needs a discrete softmax policy".into()));
        };
        let z = tape.value(*logits).clone();
        let l = policy_overlap_vars(tape, &z, *lower, *upper, &idx, c)?;
        Ok(tape.value(l).item())
    })
}

/// Worst-case actor-critic loss on a trajectory.
pub fn a3c_adv_approach1(
    steps: &[&TrajectoryStep],
    net: &Network,
    epsilon: f64,
    beta: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    let obs = stack_obs(steps.iter().map(|s| s.obs.as_slice()))?;
    eval_bounds(net, obs, epsilon, clip_range, |tape, clean, b| {
        let l = a3c_worst_case_vars(tape, clean, b, steps, beta)?;
        Ok(tape.value(l).item())
    })
}

/// Worst-case PPO loss on a trajectory.
pub fn ppo_adv(
    steps: &[&TrajectoryStep],
    net: &Network,
    epsilon: f64,
    coef: &PpoCoefficients,
    clip_range: Option<(f64, f64)>,
) -> Result<f64> {
    let obs = stack_obs(steps.iter().map(|s| s.obs.as_slice()))?;
    eval_bounds(net, obs, epsilon, clip_range, |tape, clean, b| {
        let l = ppo_worst_case_vars(tape, clean, b, steps, coef)?;
        Ok(tape.value(l).item())
    })
}
