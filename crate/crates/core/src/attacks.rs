//! Evaluation-time ℓ∞ observation attacks.
//!
//! * **PGD** (untargeted): sign-gradient ascent on the cross-entropy of the
//!   clean greedy action, softmax over Q-values for Q-heads, `−log π` for
//!   policies. Discrete heads start from `δ = 0`.
//! * **MAD**: ascent on the divergence `KL(π(·|s) ‖ π(·|s+δ))`.
//! * **Compounding**: rolls a learned dynamics model `n` steps from `s` and
//!   from `s + δ` under the clean policy and maximises the squared distance
//!   between the two end states.
//!
//! The MAD and compounding objectives (and PGD on Gaussian heads) have a
//! stationary point at `δ = 0`, so those start from a seeded uniform point in
//! the ε-box instead.
//!
//! Every iterate is projected so that `|x'ᵢ − sᵢ| ≤ ε` holds exactly in
//! floating point and `x'` stays inside the observation range. The attack
//! returns the best iterate seen, and the trace records the best objective
//! after each step, so it is nondecreasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::stack_obs;
use crate::error::{Error, Result};
use crate::nn::{HeadKind, HeadValues, HeadVars, Network, NetworkSpec};
use crate::optim::Adam;
use crate::rng::seeded;
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttackKind {
    Pgd,
    Mad,
    Compounding {
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
}

fn default_horizon() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `2.5·ε/steps`.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    10
}

impl AttackConfig {
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            steps: default_steps(),
            step_size: None,
            seed: 0,
        }
    }

    pub fn mad(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Mad,
            ..Self::pgd(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::NegativeEpsilon(self.epsilon));
        }
        if self.steps == 0 {
            return Err(Error::config("attack.steps", "must be at least 1"));
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::config("attack.step_size", "must be positive"));
            }
        }
        if let AttackKind::Compounding { horizon: 0 } = self.kind {
            return Err(Error::config("attack.horizon", "must be at least 1"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
            .unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }
}

/// Output of an attack on one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// The perturbed observation `s + δ` (projected).
    pub observation: Vec<f64>,
    /// `δ = observation − s`, with `|δᵢ| ≤ ε`.
    pub delta: Vec<f64>,
    /// Best objective value after the start point and after each step.
    pub trace: Vec<f64>,
}

impl AttackResult {
    pub fn objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(0.0)
    }
}

/// Projects `x` onto `{x' : |x' − s| ≤ ε} ∩ range`, exactly in floating point.
pub fn project(s: &[f64], x: &[f64], epsilon: f64, range: Option<(f64, f64)>) -> Vec<f64> {
    s.iter()
        .zip(x)
        .map(|(&si, &xi)| {
            let mut v = xi.clamp(si - epsilon, si + epsilon);
            while v - si > epsilon {
                v = v.next_down();
            }
            while si - v > epsilon {
                v = v.next_up();
            }
            if let Some((lo, hi)) = range {
                // With s inside the range this only moves v towards s.
                v = v.clamp(lo, hi);
            }
            v
        })
        .collect()
}

fn check_obs(net: &Network, obs: &[f64]) -> Result<()> {
    if obs.len() != net.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "attack",
            left: vec![net.input_dim()],
            right: vec![obs.len()],
        });
    }
    Ok(())
}

/// Builds the scalar objective for input `x` (a `[1, n]` leaf) on `tape`.
type Objective<'a> = dyn Fn(&mut Tape, Var) -> Result<Var> + 'a;

fn objective_and_grad(objective: &Objective<'_>, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
    let obj = objective(&mut tape, xv)?;
    let value = tape.value(obj).item();
    let grads = tape.backward(obj)?;
    let g = grads
        .get(xv)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    Ok((value, g))
}

/// Sign-gradient ascent with exact projection and best-iterate tracking.
#[allow(clippy::too_many_arguments)]
fn ascend(
    objective: &Objective<'_>,
    obs: &[f64],
    epsilon: f64,
    steps: usize,
    step_size: f64,
    range: Option<(f64, f64)>,
    random_start: Option<u64>,
) -> Result<AttackResult> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::NegativeEpsilon(epsilon));
    }
    let mut x = match random_start {
        Some(seed) if epsilon > 0.0 => {
            let mut rng = seeded(seed, 11);
            let start: Vec<f64> = obs
                .iter()
                .map(|&s| s + rng.gen_range(-epsilon..=epsilon))
                .collect();
            project(obs, &start, epsilon, range)
        }
        _ => project(obs, obs, epsilon, range),
    };
    let (mut value, mut grad) = objective_and_grad(objective, &x)?;
    let mut best = (value, x.clone());
    let mut trace = vec![value];
    if epsilon > 0.0 {
        for _ in 0..steps {
            let stepped: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(&xi, &g)| xi + step_size * sign(g))
                .collect();
            x = project(obs, &stepped, epsilon, range);
            (value, grad) = objective_and_grad(objective, &x)?;
            if value > best.0 {
                best = (value, x.clone());
            }
            trace.push(best.0);
        }
    }
    let observation = best.1;
    let delta = observation.iter().zip(obs).map(|(x, s)| x - s).collect();
    Ok(AttackResult {
        observation,
        delta,
        trace,
    })
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn bound_constants(net: &Network, tape: &mut Tape) -> crate::nn::NetVars {
    net.bind(tape, false)
}

/// Untargeted PGD against the clean greedy action (or the clean mean for
/// Gaussian policies).
pub fn pgd_untargeted(
    net: &Network,
    obs: &[f64],
    epsilon: f64,
    steps: usize,
    step_size: f64,
    range: Option<(f64, f64)>,
    seed: u64,
) -> Result<AttackResult> {
    check_obs(net, obs)?;
    let clean = net.forward(&Tensor::matrix(1, obs.len(), obs.to_vec())?)?;
    match clean {
        HeadValues::Q { q: scores, .. } | HeadValues::Policy { logits: scores, .. } => {
            let target = argmax(scores.data());
            let objective = move |tape: &mut Tape, x: Var| -> Result<Var> {
                let vars = bound_constants(net, tape);
                let scores = match net.forward_vars(tape, &vars, x)? {
                    HeadVars::Q { q, .. } => q,
                    HeadVars::Policy { logits, .. } => logits,
                    _ => unreachable!(),
                };
                let ls = tape.log_softmax(scores);
                let lp = tape.gather(ls, &[target])?;
                let s = tape.sum(lp);
                Ok(tape.neg(s))
            };
            ascend(&objective, obs, epsilon, steps, step_size, range, None)
        }
        HeadValues::Gaussian { mean, .. } => {
            let target = mean;
            let objective = move |tape: &mut Tape, x: Var| -> Result<Var> {
                let vars = bound_constants(net, tape);
                let HeadVars::Gaussian { mean, log_std, .. } = net.forward_vars(tape, &vars, x)?
                else {
                    unreachable!()
                };
                let a = tape.constant(target.clone());
                let lp = crate::bounds::gaussian_log_density_vars(tape, mean, log_std, a)?;
                let s = tape.sum(lp);
                Ok(tape.neg(s))
            };
            ascend(&objective, obs, epsilon, steps, step_size, range, Some(seed))
        }
        HeadValues::Linear { .. } => Err(Error::Unsupported(
            "PGD needs a Q or policy head".into(),
        )),
    }
}

/// KL-ascent attack on a policy head.
pub fn mad_attack(
    net: &Network,
    obs: &[f64],
    epsilon: f64,
    steps: usize,
    step_size: f64,
    range: Option<(f64, f64)>,
    seed: u64,
) -> Result<AttackResult> {
    check_obs(net, obs)?;
    let clean = net.forward(&Tensor::matrix(1, obs.len(), obs.to_vec())?)?;
    match clean {
        HeadValues::Policy { logits, .. } => {
            let p = Tensor::new(
                logits.shape().to_vec(),
                crate::tensor::softmax(logits.data()),
            )?;
            let lp = Tensor::new(
                logits.shape().to_vec(),
                crate::tensor::log_softmax(logits.data()),
            )?;
            let objective = move |tape: &mut Tape, x: Var| -> Result<Var> {
                let vars = bound_constants(net, tape);
                let HeadVars::Policy { logits, .. } = net.forward_vars(tape, &vars, x)? else {
                    unreachable!()
                };
                let lq = tape.log_softmax(logits);
                let lpc = tape.constant(lp.clone());
                let pc = tape.constant(p.clone());
                let diff = tape.sub(lpc, lq)?;
                let w = tape.mul(pc, diff)?;
                Ok(tape.sum(w))
            };
            ascend(&objective, obs, epsilon, steps, step_size, range, Some(seed))
        }
        HeadValues::Gaussian { mean, .. } => {
            let target = mean;
            let objective = move |tape: &mut Tape, x: Var| -> Result<Var> {
                let vars = bound_constants(net, tape);
                let HeadVars::Gaussian { mean, log_std, .. } = net.forward_vars(tape, &vars, x)?
                else {
                    unreachable!()
                };
                // Equal covariances: KL = ½ Σ (μ − μ')² / σ².
                let c = tape.constant(target.clone());
                let d = tape.sub(mean, c)?;
                let sq = tape.square(d);
                let s2 = tape.scale(log_std, -2.0);
                let iv = tape.exp(s2);
                let iv = tape.repeat_rows(iv, 1);
                let w = tape.mul(sq, iv)?;
                let s = tape.sum(w);
                Ok(tape.scale(s, 0.5))
            };
            ascend(&objective, obs, epsilon, steps, step_size, range, Some(seed))
        }
        HeadValues::Q { .. } | HeadValues::Linear { .. } => Err(Error::Unsupported(
            "MAD is a policy attack and needs a softmax or Gaussian policy head".into(),
        )),
    }
}

/// Learned one-step model `ŝ' = s + F(s, a)` for continuous-action tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    net: Network,
    obs_dim: usize,
    act_dim: usize,
}

impl DynamicsModel {
    /// Wraps a network with a linear head of width `obs_dim` and input
    /// `obs_dim + act_dim`.
    pub fn new(net: Network, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if net.head_kind() != HeadKind::Linear
            || net.input_dim() != obs_dim + act_dim
            || net.num_outputs() != obs_dim
        {
            return Err(Error::param(
                "dynamics",
                "need a linear head mapping obs+action to obs",
            ));
        }
        Ok(Self {
            net,
            obs_dim,
            act_dim,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Traced prediction for `[B, obs]` states and `[B, act]` actions.
    pub fn predict_vars(
        &self,
        tape: &mut Tape,
        vars: &crate::nn::NetVars,
        s: Var,
        a: Var,
    ) -> Result<Var> {
        let input = tape.concat_cols(s, a)?;
        let HeadVars::Linear { out } = self.net.forward_vars(tape, vars, input)? else {
            unreachable!()
        };
        tape.add(s, out)
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape, false);
        let sv = tape.constant(Tensor::matrix(1, s.len(), s.to_vec())?);
        let av = tape.constant(Tensor::matrix(1, a.len(), a.to_vec())?);
        let out = self.predict_vars(&mut tape, &vars, sv, av)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Mean squared next-state error over `samples`.
    pub fn mse(&self, samples: &[DynamicsSample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in samples {
            let p = self.predict(&s.obs, &s.action)?;
            total += p
                .iter()
                .zip(&s.next_obs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / self.obs_dim as f64;
        }
        Ok(total / samples.len() as f64)
    }
}

/// One observed transition with a continuous action.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsFitConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of samples held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for DynamicsFitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Fits a residual dynamics model by minibatch Adam on squared error.
/// Returns the model and its validation MSE.
pub fn fit_dynamics(
    samples: &[DynamicsSample],
    config: &DynamicsFitConfig,
) -> Result<(DynamicsModel, f64)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::param("dynamics", "no samples to fit"))?;
    let (obs_dim, act_dim) = (first.obs.len(), first.action.len());
    if act_dim == 0 {
        return Err(Error::Unsupported(
            "the compounding attack needs continuous actions".into(),
        ));
    }
    if samples
        .iter()
        .any(|s| s.obs.len() != obs_dim || s.next_obs.len() != obs_dim || s.action.len() != act_dim)
    {
        return Err(Error::param("dynamics", "inconsistent sample dimensions"));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) || config.batch_size == 0 {
        return Err(Error::config("dynamics", "bad validation fraction or batch size"));
    }
    let mut rng = seeded(config.seed, 13);
    let spec = NetworkSpec {
        input_dim: obs_dim + act_dim,
        hidden: config.hidden.clone(),
        head: HeadKind::Linear,
        outputs: obs_dim,
        initial_log_std: 0.0,
        head_scale: 0.1,
    };
    let mut model = DynamicsModel::new(Network::new(&spec, &mut rng)?, obs_dim, act_dim)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_val = ((samples.len() as f64) * config.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(samples.len().saturating_sub(1)));
    let mut train_idx = train_idx.to_vec();
    let mut adam = Adam::new(config.learning_rate);
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(train_idx.as_mut_slice(), &mut rng);
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<&DynamicsSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let s = stack_obs(batch.iter().map(|b| b.obs.as_slice()))?;
            let a = stack_obs(batch.iter().map(|b| b.action.as_slice()))?;
            let y = stack_obs(batch.iter().map(|b| b.next_obs.as_slice()))?;
            let (_, grads) = crate::agents::loss_and_grads(&model.net, |tape, vars| {
                let sv = tape.constant(s);
                let av = tape.constant(a);
                let yv = tape.constant(y);
                let p = model.predict_vars(tape, vars, sv, av)?;
                let d = tape.sub(p, yv)?;
                let sq = tape.square(d);
                Ok(tape.mean(sq))
            })?;
            adam.step(model.net.parameters_mut(), &grads)?;
        }
    }
    let val: Vec<DynamicsSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let err = model.mse(&val)?;
    Ok((model, err))
}

/// Rolls `horizon` model steps under the policy mean, starting from `s`.
fn rollout_vars(
    tape: &mut Tape,
    policy: &Network,
    pvars: &crate::nn::NetVars,
    model: &DynamicsModel,
    mvars: &crate::nn::NetVars,
    s: Var,
    horizon: usize,
) -> Result<Var> {
    let mut cur = s;
    for _ in 0..horizon {
        let HeadVars::Gaussian { mean, .. } = policy.forward_vars(tape, pvars, cur)? else {
            return Err(Error::Unsupported(
                "the compounding attack needs a Gaussian policy".into(),
            ));
        };
        let a = tape.clip(mean, -1.0, 1.0);
        cur = model.predict_vars(tape, mvars, cur, a)?;
    }
    Ok(cur)
}

/// Maximises `‖F^n(s + δ) − F^n(s)‖²` where `F^n` rolls the model `n` steps
/// under the clean policy's mean action.
#[allow(clippy::too_many_arguments)]
pub fn compounding_attack(
    policy: &Network,
    model: &DynamicsModel,
    obs: &[f64],
    epsilon: f64,
    horizon: usize,
    steps: usize,
    step_size: f64,
    range: Option<(f64, f64)>,
    seed: u64,
) -> Result<AttackResult> {
    check_obs(policy, obs)?;
    if policy.head_kind() != HeadKind::Gaussian {
        return Err(Error::Unsupported(
            "the compounding attack needs a continuous-action (Gaussian) policy".into(),
        ));
    }
    if model.obs_dim() != obs.len() {
        return Err(Error::param("dynamics", "model and observation sizes differ"));
    }
    let target = {
        let mut tape = Tape::new();
        let pv = policy.bind(&mut tape, false);
        let mv = model.net.bind(&mut tape, false);
        let s = tape.constant(Tensor::matrix(1, obs.len(), obs.to_vec())?);
        let end = rollout_vars(&mut tape, policy, &pv, model, &mv, s, horizon)?;
        tape.value(end).clone()
    };
    let objective = move |tape: &mut Tape, x: Var| -> Result<Var> {
        let pv = policy.bind(tape, false);
        let mv = model.net.bind(tape, false);
        let end = rollout_vars(tape, policy, &pv, model, &mv, x, horizon)?;
        let t = tape.constant(target.clone());
        let d = tape.sub(end, t)?;
        let sq = tape.square(d);
        Ok(tape.sum(sq))
    };
    ascend(&objective, obs, epsilon, steps, step_size, range, Some(seed))
}

/// Runs the configured attack on one observation.
pub fn attack_observation(
    net: &Network,
    obs: &[f64],
    config: &AttackConfig,
    range: Option<(f64, f64)>,
    dynamics: Option<&DynamicsModel>,
) -> Result<AttackResult> {
    config.validate()?;
    let (eps, steps, alpha, seed) = (config.epsilon, config.steps, config.step_size(), config.seed);
    match config.kind {
        AttackKind::Pgd => pgd_untargeted(net, obs, eps, steps, alpha, range, seed),
        AttackKind::Mad => mad_attack(net, obs, eps, steps, alpha, range, seed),
        AttackKind::Compounding { horizon } => {
            let model = dynamics.ok_or_else(|| {
                Error::Unsupported("the compounding attack needs a fitted dynamics model".into())
            })?;
            compounding_attack(net, model, obs, eps, horizon, steps, alpha, range, seed)
        }
    }
}
