//! Nominal RL machinery: experience containers, action selection, k-step
//! advantages and the DQN / advantage actor-critic / PPO losses.
//!
//! Losses come in two forms. The `*_vars` functions record onto a caller's
//! tape from already-computed head outputs, so a training step can share
//! one forward pass between the nominal and the adversarial term. The plain
//! functions evaluate a loss value for a network directly.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{HeadValues, HeadVars, Network};
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, log_softmax, softmax, Tensor};

const LN_2PI_E: f64 = 2.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("replay capacity", "must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions in slot order.
    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Slot the next push overwrites once the buffer is full.
    pub fn next_slot(&self) -> usize {
        self.next
    }

    /// Rebuilds a buffer from [`items`](Self::items) and [`next_slot`](Self::next_slot).
    pub fn from_parts(capacity: usize, items: Vec<Transition>, next: usize) -> Result<Self> {
        if capacity == 0 || items.len() > capacity || next >= capacity {
            return Err(Error::param("replay", "inconsistent buffer state"));
        }
        Ok(Self {
            capacity,
            items,
            next,
        })
    }

    /// Up to `batch` distinct stored transitions, chosen uniformly.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        let n = batch.min(self.items.len());
        sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// One on-policy step with everything the policy losses need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub advantage: f64,
    pub return_target: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

/// k-step advantages and return targets.
///
/// `A_t = Σ_{i<m} γ^i r_{t+i} + γ^m V(s_{t+m}) − V(s_t)` with `m = min(k, …)`
/// truncated at the first terminal step (no bootstrap past it) and at the
/// end of the rollout, where `bootstrap` stands in for `V(s_T)`.
pub fn nstep_advantages(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if dones.len() != n || values.len() != n {
        return Err(Error::param("trajectory", "rewards, dones and values differ in length"));
    }
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let mut adv = Vec::with_capacity(n);
    let mut ret = Vec::with_capacity(n);
    for t in 0..n {
        let mut g = 0.0;
        let mut disc = 1.0;
        let mut i = t;
        let mut terminal = false;
        while i < n && i - t < k {
            g += disc * rewards[i];
            disc *= gamma;
            if dones[i] {
                terminal = true;
                i += 1;
                break;
            }
            i += 1;
        }
        if !terminal {
            g += disc * if i < n { values[i] } else { bootstrap };
        }
        ret.push(g);
        adv.push(g - values[t]);
    }
    Ok((adv, ret))
}

/// Copies the actor's parameters into the target network.
pub fn sync_target(actor: &Network, target: &mut Network) -> Result<()> {
    target.copy_from(actor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    Greedy,
    Stochastic,
    EpsilonGreedy(f64),
}

/// Greedy action of the network's head output; ties go to the lowest index.
pub fn greedy_from(head: &HeadValues) -> Result<Action> {
    Ok(match head {
        HeadValues::Q { q, .. } => Action::Discrete(argmax(q.row(0))),
        HeadValues::Policy { logits, .. } => Action::Discrete(argmax(logits.row(0))),
        HeadValues::Gaussian { mean, .. } => Action::Continuous(mean.row(0).to_vec()),
        HeadValues::Linear { .. } => {
            return Err(Error::Unsupported("a regression head cannot act".into()))
        }
    })
}

/// Picks an action for one observation.
///
/// Stochastic mode samples from the policy; Q-heads have no policy
/// distribution and act greedily. ε-greedy draws uniformly from the action
/// space (the box for Gaussian heads) with probability ε.
pub fn act(net: &Network, obs: &[f64], mode: ActMode, rng: &mut impl Rng) -> Result<Action> {
    let head = net.forward(&Tensor::vector(obs.to_vec())?)?;
    match mode {
        ActMode::Greedy => greedy_from(&head),
        ActMode::Stochastic => Ok(sample_action(&head, rng)?.0),
        ActMode::EpsilonGreedy(eps) => {
            if rng.gen::<f64>() < eps {
                Ok(match &head {
                    HeadValues::Gaussian { mean, .. } => Action::Continuous(
                        (0..mean.cols()).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
                    ),
                    _ => Action::Discrete(rng.gen_range(0..net.num_outputs())),
                })
            } else {
                greedy_from(&head)
            }
        }
    }
}

/// Samples from the policy and returns the action with its log-probability.
pub fn sample_action(head: &HeadValues, rng: &mut impl Rng) -> Result<(Action, f64)> {
    match head {
        HeadValues::Policy { logits, .. } => {
            let p = softmax(logits.row(0));
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut a = p.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    a = i;
                    break;
                }
            }
            Ok((Action::Discrete(a), log_softmax(logits.row(0))[a]))
        }
        HeadValues::Gaussian { mean, log_std, .. } => {
            let mu = mean.row(0);
            let a: Vec<f64> = mu
                .iter()
                .zip(log_std.data())
                .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let lp = gaussian_log_prob(mu, log_std.data(), &a);
            Ok((Action::Continuous(a), lp))
        }
        HeadValues::Q { .. } => Ok((greedy_from(head)?, 0.0)),
        HeadValues::Linear { .. } => Err(Error::Unsupported("a regression head cannot act".into())),
    }
}

/// `log N(a; μ, diag(exp(log_std)²))`, with the same operation order as
/// the traced density so that values agree bit-for-bit.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    let d: f64 = (0..mean.len())
        .map(|i| {
            let z = action[i] - mean[i];
            z * z * (-2.0 * log_std[i]).exp()
        })
        .sum();
    let norm = log_std.iter().sum::<f64>() + 0.5 * mean.len() as f64 * crate::bounds::LN_2PI;
    -0.5 * d - norm
}

/// Stacks observation vectors into a `[batch, dim]` matrix.
pub fn stack_obs<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    if rows.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    Tensor::stack_rows(&rows)
}

fn discrete_actions(actions: &[&Action]) -> Result<Vec<usize>> {
    actions
        .iter()
        .map(|a| {
            a.discrete()
                .ok_or_else(|| Error::InvalidAction("expected a discrete action".into()))
        })
        .collect()
}

fn continuous_actions(actions: &[&Action], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(actions.len() * k);
    for a in actions {
        match a {
            Action::Continuous(v) if v.len() == k => data.extend_from_slice(v),
            _ => return Err(Error::InvalidAction(format!("expected a {k}-dim continuous action"))),
        }
    }
    Tensor::matrix(actions.len(), k, data)
}

/// Traced `log π(a_t | s_t)` per row for softmax or Gaussian heads.
pub fn log_prob_vars(tape: &mut Tape, head: &HeadVars, actions: &[&Action]) -> Result<Var> {
    match *head {
        HeadVars::Policy { logits, .. } => {
            let idx = discrete_actions(actions)?;
            let ls = tape.log_softmax(logits);
            tape.gather(ls, &idx)
        }
        HeadVars::Gaussian { mean, log_std, .. } => {
            let k = tape.value(mean).cols();
            let a = tape.constant(continuous_actions(actions, k)?);
            crate::bounds::gaussian_log_density_vars(tape, mean, log_std, a)
        }
        _ => Err(Error::Unsupported("log-probabilities need a policy head".into())),
    }
}

/// Traced mean policy entropy over the batch.
pub fn mean_entropy_vars(tape: &mut Tape, head: &HeadVars) -> Result<Var> {
    match *head {
        HeadVars::Policy { logits, .. } => {
            let p = tape.softmax(logits);
            let lp = tape.log_softmax(logits);
            let plp = tape.mul(p, lp)?;
            let s = tape.sum_cols(plp);
            let m = tape.mean(s);
            Ok(tape.neg(m))
        }
        HeadVars::Gaussian { log_std, .. } => {
            // Σ_i (log σ_i + ½ ln(2πe)), identical for every state.
            let k = tape.value(log_std).len() as f64;
            let s = tape.sum(log_std);
            Ok(tape.shift(s, 0.5 * k * LN_2PI_E))
        }
        _ => Err(Error::Unsupported("entropy needs a policy head".into())),
    }
}

/// Bootstrapped targets `r + γ·max_a' Q_target(s', a')` (no bootstrap at terminals).
///
/// With `double`, the maximising action is chosen by `actor` and evaluated by `target`.
pub fn dqn_targets(
    batch: &[&Transition],
    target: &Network,
    actor: Option<&Network>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let next = stack_obs(batch.iter().map(|t| t.next_obs.as_slice()))?;
    let HeadValues::Q { q: qt, .. } = target.forward(&next)? else {
        return Err(Error::Unsupported("DQN needs a dueling Q head".into()));
    };
    let qa = match actor {
        Some(a) => match a.forward(&next)? {
            HeadValues::Q { q, .. } => Some(q),
            _ => return Err(Error::Unsupported("DQN needs a dueling Q head".into())),
        },
        None => None,
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                return t.reward;
            }
            let row = qt.row(i);
            let best = match &qa {
                Some(q) => row[argmax(q.row(i))],
                None => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            };
            t.reward + gamma * best
        })
        .collect())
}

fn q_of(head: &HeadVars) -> Result<Var> {
    match *head {
        HeadVars::Q { q, .. } => Ok(q),
        _ => Err(Error::Unsupported("expected a dueling Q head".into())),
    }
}

/// Traced DQN loss `mean((B − Q(s, a))²)` for constant targets `B`.
pub fn dqn_nominal_loss_vars(
    tape: &mut Tape,
    head: &HeadVars,
    actions: &[usize],
    targets: &[f64],
) -> Result<Var> {
    let q = q_of(head)?;
    let qa = tape.gather(q, actions)?;
    let b = tape.constant(Tensor::vector(targets.to_vec())?);
    let d = tape.sub(b, qa)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Value of the DQN loss on `batch`.
pub fn dqn_nominal_loss(
    batch: &[&Transition],
    actor: &Network,
    target: &Network,
    gamma: f64,
    double: bool,
) -> Result<f64> {
    let targets = dqn_targets(batch, target, double.then_some(actor), gamma)?;
    let mut tape = Tape::new();
    let vars = actor.bind(&mut tape, false);
    let x = tape.constant(stack_obs(batch.iter().map(|t| t.obs.as_slice()))?);
    let head = actor.forward_vars(&mut tape, &vars, x)?;
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let l = dqn_nominal_loss_vars(&mut tape, &head, &actions, &targets)?;
    Ok(tape.value(l).item())
}

fn state_value(head: &HeadVars) -> Result<Var> {
    head.value()
        .ok_or_else(|| Error::Unsupported("expected a head with a state value".into()))
}

/// Traced advantage actor-critic loss
/// `mean(A² − A·log π(a) − β·H)` with `A = R − V(s)`.
///
/// The squared term carries the value gradient; the policy term uses `A`
/// as a constant. Returns `(loss, detached advantages)`.
pub fn a3c_nominal_loss_vars(
    tape: &mut Tape,
    head: &HeadVars,
    steps: &[&TrajectoryStep],
    beta: f64,
) -> Result<(Var, Vec<f64>)> {
    let v = state_value(head)?;
    let r = tape.constant(Tensor::vector(steps.iter().map(|s| s.return_target).collect())?);
    let adv = tape.sub(r, v)?;
    let adv_c = tape.detach(adv);
    let adv_values = tape.value(adv_c).data().to_vec();
    let value_term = tape.square(adv);
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let lp = log_prob_vars(tape, head, &actions)?;
    let pg = tape.mul(adv_c, lp)?;
    let per_step = tape.sub(value_term, pg)?;
    let m = tape.mean(per_step);
    let h = mean_entropy_vars(tape, head)?;
    let bh = tape.scale(h, beta);
    Ok((tape.sub(m, bh)?, adv_values))
}

pub fn a3c_nominal_loss(net: &Network, steps: &[&TrajectoryStep], beta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let x = tape.constant(stack_obs(steps.iter().map(|s| s.obs.as_slice()))?);
    let head = net.forward_vars(&mut tape, &vars, x)?;
    let (l, _) = a3c_nominal_loss_vars(&mut tape, &head, steps, beta)?;
    Ok(tape.value(l).item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoCoefficients {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

impl Default for PpoCoefficients {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value: 0.5,
            entropy: 0.0,
        }
    }
}

/// Traced clipped surrogate `mean(−min(ρA, clip(ρ, 1±η)A))` for given
/// traced `log π` values, using the stored old log-probabilities and advantages.
pub fn ppo_policy_term_vars(
    tape: &mut Tape,
    log_prob: Var,
    steps: &[&TrajectoryStep],
    clip: f64,
) -> Result<Var> {
    let old = tape.constant(Tensor::vector(steps.iter().map(|s| s.log_prob_old).collect())?);
    let a = tape.constant(Tensor::vector(steps.iter().map(|s| s.advantage).collect())?);
    let diff = tape.sub(log_prob, old)?;
    let ratio = tape.exp(diff);
    let unclipped = tape.mul(ratio, a)?;
    let rc = tape.clip(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = tape.mul(rc, a)?;
    let m = tape.min(unclipped, clipped)?;
    let mean = tape.mean(m);
    Ok(tape.neg(mean))
}

/// Traced `c_v·mean((V − R)²) − c_H·H`, the unperturbed part shared by the
/// nominal and adversarial PPO losses.
pub fn ppo_value_entropy_vars(
    tape: &mut Tape,
    head: &HeadVars,
    steps: &[&TrajectoryStep],
    coef: &PpoCoefficients,
) -> Result<Var> {
    let v = state_value(head)?;
    let r = tape.constant(Tensor::vector(steps.iter().map(|s| s.return_target).collect())?);
    let d = tape.sub(v, r)?;
    let sq = tape.square(d);
    let vl = tape.mean(sq);
    let vl = tape.scale(vl, coef.value);
    let h = mean_entropy_vars(tape, head)?;
    let hh = tape.scale(h, coef.entropy);
    tape.sub(vl, hh)
}

pub fn ppo_nominal_loss_vars(
    tape: &mut Tape,
    head: &HeadVars,
    steps: &[&TrajectoryStep],
    coef: &PpoCoefficients,
) -> Result<Var> {
    let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
    let lp = log_prob_vars(tape, head, &actions)?;
    let pol = ppo_policy_term_vars(tape, lp, steps, coef.clip)?;
    let rest = ppo_value_entropy_vars(tape, head, steps, coef)?;
    tape.add(pol, rest)
}

pub fn ppo_nominal_loss(
    net: &Network,
    steps: &[&TrajectoryStep],
    coef: &PpoCoefficients,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let x = tape.constant(stack_obs(steps.iter().map(|s| s.obs.as_slice()))?);
    let head = net.forward_vars(&mut tape, &vars, x)?;
    let l = ppo_nominal_loss_vars(&mut tape, &head, steps, coef)?;
    Ok(tape.value(l).item())
}

/// Runs `build` on a fresh tape with `net`'s parameters as leaves and
/// returns the loss value and one gradient slot per parameter.
pub fn loss_and_grads(
    net: &Network,
    build: impl FnOnce(&mut Tape, &crate::nn::NetVars) -> Result<Var>,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, true);
    let loss = build(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((
        value,
        vars.params().iter().map(|&p| grads.get(p).cloned()).collect(),
    ))
}
