//! Robustness metrics for trained agents.
//!
//! * **GWC** (greedy worst case): at every step, take the lowest-valued action
//!   among those the bounds cannot rule out, `Γ = {i : ū_i ≥ max_j l_j}`.
//!   One bound pass per step.
//! * **AWC** (absolute worst case): depth-first search over every action in
//!   `Γ` at every state, returning the smallest episode reward. Exponential,
//!   so it runs under a node budget and says so when the budget runs out.
//! * **ACR**: fraction of greedy steps whose action is certified, i.e. its
//!   lower bound beats every other action's upper bound.
//! * Reward under attack (mean ± standard error), and the Q-value bias
//!   `Q(s_t, a_t) − Σ γ^{i−t} r_i` along nominal episodes.
//!
//! Q-heads use Q-values and the dueling bounds; softmax policies use action
//! probabilities and their bounds.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::greedy_from;
use crate::attacks::{attack_observation, AttackConfig, DynamicsModel};
use crate::bounds::softmax_prob_bounds_all;
use crate::bounds::IntervalTensor;
use crate::env::{Action, AnyEnv, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nn::{BoundVars, HeadVars, Network};
use crate::radial::forward_with_bounds;
use crate::tape::Tape;
use crate::tensor::{softmax, Tensor};

/// Per-action values and their bounds for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    /// Q-values, or probabilities for policy heads.
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBounds {
    /// Actions the bounds cannot rule out: `{i : upper_i ≥ max_j lower_j}`.
    pub fn possible(&self) -> Vec<usize> {
        let floor = self.lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (0..self.upper.len())
            .filter(|&i| self.upper[i] >= floor)
            .collect()
    }

    /// Whether `a` is certified: `lower_a > max_{y≠a} upper_y`.
    pub fn certified(&self, a: usize) -> bool {
        self.upper
            .iter()
            .enumerate()
            .filter(|&(y, _)| y != a)
            .all(|(_, &u)| self.lower[a] > u)
    }

    /// Lowest-valued possible action; ties go to the lowest index.
    pub fn worst_possible(&self) -> usize {
        let mut best: Option<usize> = None;
        for i in self.possible() {
            if best.is_none_or(|b| self.values[i] < self.values[b]) {
                best = Some(i);
            }
        }
        best.expect("the set of possible actions always contains the greedy action")
    }
}

/// One bound pass: values and bounds for every discrete action at `obs`.
pub fn action_bounds(
    net: &Network,
    obs: &[f64],
    epsilon: f64,
    clip_range: Option<(f64, f64)>,
) -> Result<ActionBounds> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let x = Tensor::matrix(1, obs.len(), obs.to_vec())?;
    let (clean, bounds) = forward_with_bounds(&mut tape, net, &vars, x, epsilon, clip_range)?;
    match (clean, bounds) {
        (HeadVars::Q { q, .. }, BoundVars::Q { lower, upper, .. }) => Ok(ActionBounds {
            values: tape.value(q).data().to_vec(),
            lower: tape.value(lower).data().to_vec(),
            upper: tape.value(upper).data().to_vec(),
        }),
        (HeadVars::Policy { logits, .. }, BoundVars::Logits { lower, upper }) => {
            let k = tape.value(logits).len();
            let iv = IntervalTensor::new(
                tape.value(lower).reshape(vec![k])?,
                tape.value(upper).reshape(vec![k])?,
            )?;
            let (lo, hi) = softmax_prob_bounds_all(&iv)?;
            Ok(ActionBounds {
                values: softmax(tape.value(logits).data()),
                lower: lo,
                upper: hi,
            })
        }
        _ => Err(Error::Unsupported(
            "worst-case metrics need discrete actions (a Q or softmax head)".into(),
        )),
    }
}

fn clip_range(env: &impl Environment) -> Option<(f64, f64)> {
    env.spec().observation_range
}

fn require_discrete(env: &impl Environment) -> Result<()> {
    if !env.spec().action_space.is_discrete() {
        return Err(Error::Unsupported(
            "worst-case metrics need a discrete action space".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwcResult {
    pub reward: f64,
    pub steps: usize,
    pub bound_passes: usize,
}

/// Greedy worst-case episode reward.
pub fn gwc<E: Environment>(net: &Network, env: &mut E, epsilon: f64, seed: u64) -> Result<GwcResult> {
    require_discrete(env)?;
    let range = clip_range(env);
    let mut obs = env.reset(seed);
    let (mut reward, mut steps, mut passes) = (0.0, 0, 0);
    while !env.is_done() {
        let b = action_bounds(net, &obs, epsilon, range)?;
        passes += 1;
        let step = env.step(&Action::Discrete(b.worst_possible()))?;
        reward += step.reward;
        steps += 1;
        obs = step.observation;
    }
    Ok(GwcResult {
        reward,
        steps,
        bound_passes: passes,
    })
}

/// Outcome of the exhaustive worst-case search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AwcOutcome {
    Exact { reward: f64, nodes: u64 },
    /// The budget ran out; `upper_bound` is the smallest reward found so far
    /// (the true minimum is at most this), if any episode was completed.
    BudgetExhausted { upper_bound: Option<f64>, nodes: u64 },
}

impl AwcOutcome {
    pub fn exact(&self) -> Option<f64> {
        match *self {
            AwcOutcome::Exact { reward, .. } => Some(reward),
            AwcOutcome::BudgetExhausted { .. } => None,
        }
    }
}

pub const DEFAULT_AWC_BUDGET: u64 = 1_000_000;

/// Absolute worst-case episode reward by depth-first search over every
/// action sequence consistent with the bounds.
///
/// Children are visited in increasing value order, so the first completed
/// episode is the GWC trajectory. States are memoised by
/// `(state hash, accumulated reward)` when the environment provides hashes.
pub fn awc<E: Environment>(
    net: &Network,
    env: &mut E,
    epsilon: f64,
    seed: u64,
    node_budget: u64,
) -> Result<AwcOutcome> {
    require_discrete(env)?;
    if !env.is_deterministic() {
        return Err(Error::Unsupported(
            "exact worst-case search needs a deterministic environment".into(),
        ));
    }
    let range = clip_range(env);
    env.reset(seed);
    let mut stack = vec![(env.snapshot(), 0.0f64)];
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut best: Option<f64> = None;
    let mut nodes = 0u64;
    while let Some((state, acc)) = stack.pop() {
        env.restore(&state)?;
        if env.is_done() {
            best = Some(best.map_or(acc, |b: f64| b.min(acc)));
            continue;
        }
        if let Some(key) = env.state_key() {
            if !seen.insert((key, acc.to_bits())) {
                continue;
            }
        }
        if nodes >= node_budget {
            return Ok(AwcOutcome::BudgetExhausted {
                upper_bound: best,
                nodes,
            });
        }
        nodes += 1;
        let b = action_bounds(net, &env.observation(), epsilon, range)?;
        let mut children = b.possible();
        children.sort_by(|&i, &j| b.values[i].total_cmp(&b.values[j]).then(i.cmp(&j)));
        for &k in children.iter().rev() {
            env.restore(&state)?;
            let step = env.step(&Action::Discrete(k))?;
            stack.push((env.snapshot(), acc + step.reward));
        }
    }
    Ok(AwcOutcome::Exact {
        reward: best.expect("search always completes at least one episode"),
        nodes,
    })
}

/// Certified and total step counts of one greedy episode.
pub fn acr_episode<E: Environment>(
    net: &Network,
    env: &mut E,
    epsilon: f64,
    seed: u64,
) -> Result<(usize, usize)> {
    require_discrete(env)?;
    let range = clip_range(env);
    let mut obs = env.reset(seed);
    let (mut certified, mut total) = (0, 0);
    while !env.is_done() {
        let b = action_bounds(net, &obs, epsilon, range)?;
        let a = crate::tensor::argmax(&b.values);
        if b.certified(a) {
            certified += 1;
        }
        total += 1;
        obs = env.step(&Action::Discrete(a))?.observation;
    }
    Ok((certified, total))
}

/// Action certification rate over greedy episodes, one per seed.
pub fn acr(net: &Network, env: &EnvConfig, epsilon: f64, seeds: &[u64]) -> Result<f64> {
    let counts = par_episodes(env, seeds, |e, s| acr_episode(net, e, epsilon, s))?;
    let (c, t) = counts
        .iter()
        .fold((0usize, 0usize), |(c, t), &(ci, ti)| (c + ci, t + ti));
    Ok(if t == 0 { 0.0 } else { c as f64 / t as f64 })
}

/// Mean and standard error of the mean of per-episode rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub sem: f64,
    pub rewards: Vec<f64>,
}

impl RewardStats {
    /// Uses the unbiased sample variance; a single episode has zero error.
    pub fn from_rewards(rewards: Vec<f64>) -> Self {
        let n = rewards.len() as f64;
        if rewards.is_empty() {
            return Self {
                mean: 0.0,
                sem: 0.0,
                rewards,
            };
        }
        let mean = rewards.iter().sum::<f64>() / n;
        let sem = if rewards.len() < 2 {
            0.0
        } else {
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, sem, rewards }
    }
}

/// Runs one greedy episode where the agent sees `perturb(obs, t)` instead of `obs`.
pub fn run_episode<E: Environment>(
    net: &Network,
    env: &mut E,
    seed: u64,
    mut perturb: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut obs = env.reset(seed);
    let mut reward = 0.0;
    let mut t = 0;
    while !env.is_done() {
        let seen = perturb(&obs, t)?;
        let head = net.forward(&Tensor::vector(seen)?)?;
        let step = env.step(&greedy_from(&head)?)?;
        reward += step.reward;
        obs = step.observation;
        t += 1;
    }
    Ok(reward)
}

/// Per-frame attack seed, derived from the attack, episode and step.
fn frame_seed(base: u64, episode: u64, t: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ episode.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (t as u64).wrapping_mul(0x1656_67B1_9E37_79F9)
}

/// Greedy episode reward with the attack applied to every observation.
pub fn attacked_episode<E: Environment>(
    net: &Network,
    env: &mut E,
    attack: &AttackConfig,
    seed: u64,
    dynamics: Option<&DynamicsModel>,
) -> Result<f64> {
    attack.validate()?;
    let range = clip_range(env);
    run_episode(net, env, seed, |obs, t| {
        if attack.epsilon == 0.0 {
            return Ok(obs.to_vec());
        }
        let cfg = AttackConfig {
            seed: frame_seed(attack.seed, seed, t),
            ..*attack
        };
        Ok(attack_observation(net, obs, &cfg, range, dynamics)?.observation)
    })
}

/// Runs `f` on a fresh environment per seed, in parallel, preserving seed order.
pub fn par_episodes<T: Send>(
    env: &EnvConfig,
    seeds: &[u64],
    f: impl Fn(&mut AnyEnv, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut e = env.build()?;
            f(&mut e, s)
        })
        .collect()
}

pub fn nominal_reward(net: &Network, env: &EnvConfig, seeds: &[u64]) -> Result<RewardStats> {
    let r = par_episodes(env, seeds, |e, s| run_episode(net, e, s, |o, _| Ok(o.to_vec())))?;
    Ok(RewardStats::from_rewards(r))
}

pub fn reward_under_attack(
    net: &Network,
    env: &EnvConfig,
    attack: &AttackConfig,
    seeds: &[u64],
    dynamics: Option<&DynamicsModel>,
) -> Result<RewardStats> {
    let r = par_episodes(env, seeds, |e, s| attacked_episode(net, e, attack, s, dynamics))?;
    Ok(RewardStats::from_rewards(r))
}

/// `Q(s_t, a_t) − Σ_{i≥t} γ^{i−t} r_i` along one greedy episode.
pub fn q_value_bias<E: Environment>(
    net: &Network,
    env: &mut E,
    gamma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut obs = env.reset(seed);
    let (mut predicted, mut rewards) = (Vec::new(), Vec::new());
    while !env.is_done() {
        let crate::nn::HeadValues::Q { q, .. } = net.forward(&Tensor::vector(obs.clone())?)?
        else {
            return Err(Error::Unsupported("Q-value bias needs a Q head".into()));
        };
        let a = crate::tensor::argmax(q.data());
        predicted.push(q.data()[a]);
        let step = env.step(&Action::Discrete(a))?;
        rewards.push(step.reward);
        obs = step.observation;
    }
    let mut ret = 0.0;
    let mut bias = vec![0.0; rewards.len()];
    for t in (0..rewards.len()).rev() {
        ret = rewards[t] + gamma * ret;
        bias[t] = predicted[t] - ret;
    }
    Ok(bias)
}

/// Evaluation results for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub nominal: RewardStats,
    pub attacks: Vec<AttackRow>,
    /// One GWC reward per seed, with the ε used.
    pub gwc: Option<WorstCaseRow>,
    pub awc: Option<Vec<AwcOutcome>>,
    pub acr: Option<f64>,
    pub q_bias: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: AttackConfig,
    pub stats: RewardStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRow {
    pub epsilon: f64,
    pub rewards: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sem_example() {
        let s = RewardStats::from_rewards(vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.mean, 0.5);
        assert!((s.sem - 0.288_675_134_594_812_9).abs() < 1e-12);
    }

    #[test]
    fn possible_set_and_certification() {
        let b = ActionBounds {
            values: vec![1.0, 0.5, 0.2],
            lower: vec![0.8, 0.3, -1.0],
            upper: vec![1.2, 0.9, 0.1],
        };
        assert_eq!(b.possible(), vec![0, 1]);
        assert_eq!(b.worst_possible(), 1);
        assert!(!b.certified(0));
        let b = ActionBounds {
            upper: vec![1.2, 0.7, 0.1],
            ..b
        };
        assert!(b.certified(0));
        assert_eq!(b.possible(), vec![0]);
    }
}
