//! Independent reference computations and the checks built on them.
//!
//! Nothing here goes through the tape: forward passes, losses and worst-case
//! rewards are recomputed from the raw weights with plain loops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use radial_core::agents::{
    a3c_nominal_loss, dqn_nominal_loss, dqn_targets, ppo_nominal_loss, PpoCoefficients,
    Transition, TrajectoryStep,
};
use radial_core::attacks::{mad_attack, pgd_untargeted, project, AttackConfig};
use radial_core::bounds::ibp_network;
use radial_core::env::{Action, TabularMdp, TabularMdpConfig};
use radial_core::eval::{action_bounds, awc, gwc, AwcOutcome};
use radial_core::nn::{Dense, Head, HeadKind, Network};
use radial_core::radial::{
    a3c_adv_approach1, a3c_adv_approach2, dqn_adv_approach1, dqn_adv_approach2, ppo_adv,
};
use radial_core::schedule::EpsilonSchedule;
use radial_core::Tensor;

use super::{random_net, random_obs, random_steps, random_transitions, rng};

// Reference forward pass ----------------------------------------------------

fn dense(d: &Dense, x: &[f64]) -> Vec<f64> {
    let (w, b) = (d.weight.data(), d.bias.data());
    let n = x.len();
    (0..d.outputs())
        .map(|o| b[o] + w[o * n..(o + 1) * n].iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// Head outputs at one observation.
#[derive(Debug, Clone)]
pub struct Outputs {
    /// Q-values, logits, Gaussian mean or linear output.
    pub primary: Vec<f64>,
    pub value: f64,
    pub log_std: Vec<f64>,
}

pub fn forward(net: &Network, x: &[f64]) -> Outputs {
    let mut h = x.to_vec();
    for layer in net.trunk() {
        h = dense(layer, &h).into_iter().map(|v| v.max(0.0)).collect();
    }
    match net.head() {
        Head::DuelingQ { value, advantage } => {
            let v = dense(value, &h)[0];
            Outputs {
                primary: dense(advantage, &h).iter().map(|a| v + a).collect(),
                value: v,
                log_std: vec![],
            }
        }
        Head::Softmax { logits, value } => Outputs {
            primary: dense(logits, &h),
            value: dense(value, &h)[0],
            log_std: vec![],
        },
        Head::Gaussian {
            mean,
            log_std,
            value,
        } => Outputs {
            primary: dense(mean, &h),
            value: dense(value, &h)[0],
            log_std: log_std.data().to_vec(),
        },
        Head::Linear { out } => Outputs {
            primary: dense(out, &h),
            value: 0.0,
            log_std: vec![],
        },
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn log_prob(out: &Outputs, action: &Action) -> f64 {
    match action {
        Action::Discrete(a) => log_softmax(&out.primary)[*a],
        Action::Continuous(a) => out
            .primary
            .iter()
            .zip(&out.log_std)
            .zip(a)
            .map(|((m, ls), x)| {
                let z = (x - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LN_2PI
            })
            .sum(),
    }
}

fn entropy(out: &Outputs) -> f64 {
    if out.log_std.is_empty() {
        let lp = log_softmax(&out.primary);
        -lp.iter().map(|l| l.exp() * l).sum::<f64>()
    } else {
        out.log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
    }
}

/// A perturbation of every coordinate: uniform in the box for even `i`,
/// a random corner for odd `i`.
pub fn sample_delta(rng: &mut ChaCha8Rng, dim: usize, eps: f64, i: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            if i.is_multiple_of(2) {
                rng.gen_range(-eps..=eps)
            } else if rng.gen::<bool>() {
                eps
            } else {
                -eps
            }
        })
        .collect()
}

fn perturb(x: &[f64], d: &[f64], range: Option<(f64, f64)>) -> Vec<f64> {
    x.iter()
        .zip(d)
        .map(|(x, d)| match range {
            Some((lo, hi)) => (x + d).clamp(lo, hi),
            None => x + d,
        })
        .collect()
}

// IBP soundness ---------------------------------------------------------------

#[derive(Debug, Default, Clone, Copy)]
pub struct IbpSummary {
    pub networks: usize,
    pub cases: usize,
    pub samples: usize,
    pub violations: usize,
}

pub const IBP_EPSILONS: [f64; 3] = [1e-3, 0.05, 0.2];

/// Random dense-ReLU networks (≤3 hidden layers, ≤64 units, every head kind);
/// every sampled output must lie inside the bound interval, exactly.
pub fn ibp_soundness(networks: usize, observations: usize, samples: usize) -> IbpSummary {
    let mut s = IbpSummary::default();
    let heads = [HeadKind::DuelingQ, HeadKind::Softmax, HeadKind::Gaussian, HeadKind::Linear];
    for n in 0..networks {
        let mut r = rng(50_000 + n as u64);
        let dim = r.gen_range(1..=8);
        let head = heads[n % heads.len()];
        let outputs = r.gen_range(2..=4);
        let net = random_net(&mut r, dim, head, outputs, 3, 64);
        // A quarter of the networks see clipped observations.
        let range = (n % 4 == 3).then_some((0.0, 1.0));
        s.networks += 1;
        for _ in 0..observations {
            let obs: Vec<f64> = match range {
                Some(_) => (0..dim).map(|_| r.gen_range(0.0..=1.0)).collect(),
                None => random_obs(&mut r, dim),
            };
            for eps in IBP_EPSILONS {
                let b = ibp_network(&net, &Tensor::vector(obs.clone()).unwrap(), eps, range).unwrap();
                let (lo, hi) = (b.lower().data(), b.upper().data());
                for i in 0..samples {
                    let x = perturb(&obs, &sample_delta(&mut r, dim, eps, i), range);
                    let y = forward(&net, &x).primary;
                    s.violations += y
                        .iter()
                        .enumerate()
                        .filter(|&(j, v)| !(lo[j] <= *v && *v <= hi[j]))
                        .count();
                    s.samples += 1;
                }
                s.cases += 1;
            }
        }
    }
    s
}

// Loss oracles ------------------------------------------------------------------

/// `mean((B − Q(s+δ, a))²)` with `B` from the unperturbed next states.
pub fn perturbed_td(net: &Network, batch: &[Transition], targets: &[f64], deltas: &[Vec<f64>]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .zip(targets)
        .zip(deltas)
        .map(|((t, b), d)| {
            let q = forward(net, &perturb(&t.obs, d, None)).primary;
            (b - q[t.action]).powi(2)
        })
        .sum::<f64>()
        / n
}

/// `mean(A² − A·log π(a|s+δ)) − β·H(s)` with `A = R − V(s)` at the clean state.
pub fn perturbed_actor_critic(net: &Network, steps: &[TrajectoryStep], beta: f64, deltas: &[Vec<f64>]) -> f64 {
    let n = steps.len() as f64;
    let (mut m, mut h) = (0.0, 0.0);
    for (s, d) in steps.iter().zip(deltas) {
        let clean = forward(net, &s.obs);
        let adv = s.return_target - clean.value;
        let lp = log_prob(&forward(net, &perturb(&s.obs, d, None)), &s.action);
        m += adv * adv - adv * lp;
        h += entropy(&clean);
    }
    m / n - beta * h / n
}

/// Clipped surrogate at `π(·|s+δ)` plus the clean value and entropy terms.
pub fn perturbed_ppo(net: &Network, steps: &[TrajectoryStep], coef: &PpoCoefficients, deltas: &[Vec<f64>]) -> f64 {
    let n = steps.len() as f64;
    let (mut pol, mut v, mut h) = (0.0, 0.0, 0.0);
    for (s, d) in steps.iter().zip(deltas) {
        let clean = forward(net, &s.obs);
        let lp = log_prob(&forward(net, &perturb(&s.obs, d, None)), &s.action);
        let ratio = (lp - s.log_prob_old).exp();
        let a = s.advantage;
        pol += (ratio * a).min(ratio.clamp(1.0 - coef.clip, 1.0 + coef.clip) * a);
        v += (clean.value - s.return_target).powi(2);
        h += entropy(&clean);
    }
    -pol / n + coef.value * v / n - coef.entropy * h / n
}

pub struct LossInstance {
    pub net: Network,
    pub target: Network,
    pub batch: Vec<Transition>,
    pub steps: Vec<TrajectoryStep>,
    pub epsilon: f64,
}

/// `head` is the network's head; `target` is always a dueling Q-network.
pub fn loss_instance(seed: u64, head: HeadKind) -> LossInstance {
    let mut r = rng(seed);
    let dim = r.gen_range(1..=5);
    let k = r.gen_range(2..=4);
    let net = random_net(&mut r, dim, head, k, 2, 16);
    let target = random_net(&mut r, dim, HeadKind::DuelingQ, k, 1, 8);
    let batch = random_transitions(&mut r, 6, dim, k);
    let steps = random_steps(&mut r, 6, dim, head, k);
    LossInstance {
        net,
        target,
        batch,
        steps,
        epsilon: r.gen_range(0.01..0.3),
    }
}

pub const GAMMA: f64 = 0.99;
pub const BETA: f64 = 0.01;

pub fn ppo_coefficients() -> PpoCoefficients {
    PpoCoefficients {
        entropy: 0.01,
        ..Default::default()
    }
}

/// Largest deviation from each ε = 0 identity over `instances` random cases:
/// `[q_overlap, policy_overlap, td, actor_critic, ppo]`.
pub fn reduction_identities(instances: usize) -> [f64; 5] {
    let mut worst = [0.0f64; 5];
    for i in 0..instances {
        let seed = 70_000 + i as u64;
        let q = loss_instance(seed, HeadKind::DuelingQ);
        let batch: Vec<&Transition> = q.batch.iter().collect();
        let q_overlap = dqn_adv_approach2(&batch, &q.net, 0.0, 0.5, None).unwrap().abs();
        let td = (dqn_adv_approach1(&batch, &q.net, &q.target, 0.0, GAMMA, false, None).unwrap()
            - dqn_nominal_loss(&batch, &q.net, &q.target, GAMMA, false).unwrap())
        .abs();
        let sm = loss_instance(seed, HeadKind::Softmax);
        let sm_steps: Vec<&TrajectoryStep> = sm.steps.iter().collect();
        let overlap = a3c_adv_approach2(&sm_steps, &sm.net, 0.0, 0.5, None).unwrap().abs();

        let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Gaussian };
        let p = loss_instance(seed, head);
        let steps: Vec<&TrajectoryStep> = p.steps.iter().collect();
        let ac = (a3c_adv_approach1(&steps, &p.net, 0.0, BETA, None).unwrap()
            - a3c_nominal_loss(&p.net, &steps, BETA).unwrap())
        .abs();
        let coef = ppo_coefficients();
        let ppo = (ppo_adv(&steps, &p.net, 0.0, &coef, None).unwrap()
            - ppo_nominal_loss(&p.net, &steps, &coef).unwrap())
        .abs();
        for (w, v) in worst.iter_mut().zip([q_overlap, overlap, td, ac, ppo]) {
            *w = w.max(v);
        }
    }
    worst
}

#[derive(Debug, Default, Clone, Copy)]
pub struct UpperBoundSummary {
    pub instances: usize,
    pub checks: usize,
    /// `[td, actor_critic, ppo]` counts of perturbed losses above the bound.
    pub violations: [usize; 3],
    /// Smallest `bound − perturbed` seen, per loss.
    pub min_gap: [f64; 3],
}

/// Worst-case losses against the nominal loss at `deltas` sampled perturbations.
pub fn upper_bound_property(instances: usize, deltas: usize, slack: f64) -> UpperBoundSummary {
    let mut s = UpperBoundSummary {
        min_gap: [f64::INFINITY; 3],
        ..Default::default()
    };
    for i in 0..instances {
        let seed = 90_000 + i as u64;
        let mut r = rng(seed ^ 0xABCD);
        let q = loss_instance(seed, HeadKind::DuelingQ);
        let batch: Vec<&Transition> = q.batch.iter().collect();
        let targets = dqn_targets(&batch, &q.target, None, GAMMA).unwrap();
        let td_bound = dqn_adv_approach1(&batch, &q.net, &q.target, q.epsilon, GAMMA, false, None).unwrap();

        let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Gaussian };
        let p = loss_instance(seed, head);
        let steps: Vec<&TrajectoryStep> = p.steps.iter().collect();
        let ac_bound = a3c_adv_approach1(&steps, &p.net, p.epsilon, BETA, None).unwrap();
        let coef = ppo_coefficients();
        let ppo_bound = ppo_adv(&steps, &p.net, p.epsilon, &coef, None).unwrap();

        let qdim = q.batch[0].obs.len();
        let pdim = p.steps[0].obs.len();
        for j in 0..deltas {
            let dq: Vec<Vec<f64>> = (0..q.batch.len())
                .map(|_| sample_delta(&mut r, qdim, q.epsilon, j))
                .collect();
            let dp: Vec<Vec<f64>> = (0..p.steps.len())
                .map(|_| sample_delta(&mut r, pdim, p.epsilon, j))
                .collect();
            let gaps = [
                td_bound - perturbed_td(&q.net, &q.batch, &targets, &dq),
                ac_bound - perturbed_actor_critic(&p.net, &p.steps, BETA, &dp),
                ppo_bound - perturbed_ppo(&p.net, &p.steps, &coef, &dp),
            ];
            for (k, g) in gaps.into_iter().enumerate() {
                if g < -slack {
                    s.violations[k] += 1;
                }
                s.min_gap[k] = s.min_gap[k].min(g);
            }
            s.checks += 1;
        }
        s.instances += 1;
    }
    s
}

// Worst-case search oracle --------------------------------------------------------

/// `Γ(s) = {i : ū_i ≥ max_j l_j}` from the dueling bounds at `obs`.
fn gamma_set(net: &Network, obs: &[f64], eps: f64) -> Vec<usize> {
    let b = action_bounds(net, obs, eps, Some((0.0, 1.0))).unwrap();
    let floor = b.lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..b.upper.len()).filter(|&i| b.upper[i] >= floor).collect()
}

/// Minimum episode reward over every Γ-consistent action sequence, by plain
/// recursion over the transition table. Also returns the number of sequences.
pub fn exhaustive_worst_case(net: &Network, cfg: &TabularMdpConfig, eps: f64) -> (f64, u64) {
    fn rec(net: &Network, cfg: &TabularMdpConfig, eps: f64, s: usize, t: usize) -> (f64, u64) {
        let mut obs = vec![0.0; cfg.next.len()];
        obs[s] = 1.0;
        let mut best = f64::INFINITY;
        let mut count = 0;
        for a in gamma_set(net, &obs, eps) {
            let r = cfg.reward[s][a];
            let s2 = cfg.next[s][a];
            let done = cfg.terminal.get(s2).copied().unwrap_or(false) || t + 1 >= cfg.horizon;
            let (rest, n) = if done { (0.0, 1) } else { rec(net, cfg, eps, s2, t + 1) };
            best = best.min(r + rest);
            count += n;
        }
        (best, count)
    }
    rec(net, cfg, eps, cfg.start, 0)
}

#[derive(Debug, Default, Clone)]
pub struct WorstCaseSummary {
    pub instances: usize,
    pub awc_exact_matches: usize,
    pub gwc_at_least_awc: usize,
    pub gwc_equals_awc: usize,
    /// Instances where Γ had more than one action somewhere along the search.
    pub branching: usize,
}

pub fn worst_case_oracle(instances: usize) -> WorstCaseSummary {
    let mut s = WorstCaseSummary::default();
    for i in 0..instances {
        let seed = 30_000 + i as u64;
        let mut r = rng(seed);
        let states = r.gen_range(3..=6);
        let actions = r.gen_range(2..=3);
        let horizon = r.gen_range(2..=8);
        let cfg = TabularMdpConfig::random(states, actions, horizon, seed);
        let head = if i % 4 == 3 { HeadKind::Softmax } else { HeadKind::DuelingQ };
        let net = random_net(&mut r, states, head, actions, 2, 16);
        let eps = r.gen_range(0.05..0.6);

        let (oracle, sequences) = exhaustive_worst_case(&net, &cfg, eps);
        let mut env = TabularMdp::new(cfg.clone()).unwrap();
        let a = match awc(&net, &mut env, eps, 0, 10_000_000).unwrap() {
            AwcOutcome::Exact { reward, .. } => reward,
            other => panic!("instance {i}: {other:?}"),
        };
        let g = gwc(&net, &mut env, eps, 0).unwrap().reward;
        s.instances += 1;
        s.awc_exact_matches += usize::from(a == oracle);
        s.gwc_at_least_awc += usize::from(g >= a);
        s.gwc_equals_awc += usize::from(g == a);
        // More sequences than the horizon-long greedy path means branching.
        s.branching += usize::from(sequences > 1);
    }
    s
}

// Attack oracles ---------------------------------------------------------------------

/// Every `2^n` corner of the ε-box around `s`.
pub fn corners(s: &[f64], eps: f64) -> Vec<Vec<f64>> {
    (0..1u32 << s.len())
        .map(|m| {
            s.iter()
                .enumerate()
                .map(|(i, x)| if m >> i & 1 == 1 { x + eps } else { x - eps })
                .collect()
        })
        .collect()
}

/// Linear model (no hidden layers) with `dim` inputs.
pub fn linear_model(r: &mut ChaCha8Rng, dim: usize, head: HeadKind, outputs: usize) -> Network {
    let log_std = r.gen_range(-1.0..0.5);
    let mut dense = |o: usize| Dense {
        weight: Tensor::matrix(o, dim, (0..o * dim).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap(),
        bias: Tensor::vector((0..o).map(|_| r.gen_range(-0.5..0.5)).collect()).unwrap(),
    };
    let head = match head {
        HeadKind::DuelingQ => Head::DuelingQ {
            value: dense(1),
            advantage: dense(outputs),
        },
        HeadKind::Softmax => Head::Softmax {
            logits: dense(outputs),
            value: dense(1),
        },
        HeadKind::Gaussian => Head::Gaussian {
            mean: dense(outputs),
            log_std: Tensor::full(&[outputs], log_std),
            value: dense(1),
        },
        HeadKind::Linear => Head::Linear { out: dense(outputs) },
    };
    Network::from_parts(vec![], head).unwrap()
}

/// Untargeted objective: cross-entropy of the clean greedy action for
/// discrete heads, `−log N(μ(s); μ(x), σ)` for Gaussian ones.
pub fn pgd_objective(net: &Network, s: &[f64], x: &[f64]) -> f64 {
    let clean = forward(net, s);
    let out = forward(net, x);
    if clean.log_std.is_empty() {
        let target = radial_core::tensor::argmax(&clean.primary);
        -log_softmax(&out.primary)[target]
    } else {
        -log_prob(&out, &Action::Continuous(clean.primary))
    }
}

/// `KL(π(·|s) ‖ π(·|x))`.
pub fn mad_objective(net: &Network, s: &[f64], x: &[f64]) -> f64 {
    let clean = forward(net, s);
    let out = forward(net, x);
    if clean.log_std.is_empty() {
        let (p, q) = (log_softmax(&clean.primary), log_softmax(&out.primary));
        p.iter().zip(&q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum()
    } else {
        clean
            .primary
            .iter()
            .zip(&out.primary)
            .zip(&clean.log_std)
            .map(|((m0, m), ls)| 0.5 * ((m - m0) / ls.exp()).powi(2))
            .sum()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AttackSummary {
    pub attacks: usize,
    pub projection_violations: usize,
    pub oracle_cases: usize,
    pub max_oracle_gap: f64,
}

/// Projection on random deep networks, plus PGD/MAD against corner
/// enumeration on linear models with `dim ≤ 4`. The oracle cases are the
/// model classes where sign ascent provably reaches the best corner: two
/// actions (the sign of the gradient never changes) and one-dimensional
/// Gaussian means (the objective is symmetric in `δ`).
pub fn attack_checks(instances: usize) -> AttackSummary {
    let mut s = AttackSummary::default();
    for i in 0..instances {
        let seed = 40_000 + i as u64;
        let mut r = rng(seed);

        // Projection: every output of both attacks on deep networks, with and
        // without an observation range.
        let dim = r.gen_range(1..=8);
        let head = if i % 2 == 0 { HeadKind::Softmax } else { HeadKind::Gaussian };
        let net = random_net(&mut r, dim, head, 3, 2, 32);
        let range = (i % 3 == 0).then_some((0.0, 1.0));
        let obs: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..=1.0)).collect();
        for eps in [1e-3, 0.1, 1.0 / 3.0, 0.7] {
            let cfg = AttackConfig::pgd(eps);
            for res in [
                pgd_untargeted(&net, &obs, eps, cfg.steps, cfg.step_size(), range, seed).unwrap(),
                mad_attack(&net, &obs, eps, cfg.steps, cfg.step_size(), range, seed).unwrap(),
            ] {
                s.attacks += 1;
                let inside = res.observation.iter().zip(&obs).all(|(x, o)| (x - o).abs() <= eps)
                    && res.delta.iter().all(|d| d.abs() <= eps)
                    && range.is_none_or(|(lo, hi)| res.observation.iter().all(|x| (lo..=hi).contains(x)));
                s.projection_violations += usize::from(!inside);
            }
        }

        // Corner oracle on linear models.
        let dim = r.gen_range(1..=4);
        let obs = random_obs(&mut r, dim);
        let eps = r.gen_range(0.01..0.5);
        let cfg = AttackConfig::pgd(eps);
        let (steps, alpha) = (cfg.steps, cfg.step_size());
        let mut compare = |net: &Network, attack: &str| {
            let (res, objective): (_, fn(&Network, &[f64], &[f64]) -> f64) = match attack {
                "pgd" => (pgd_untargeted(net, &obs, eps, steps, alpha, None, seed).unwrap(), pgd_objective),
                _ => (mad_attack(net, &obs, eps, steps, alpha, None, seed).unwrap(), mad_objective),
            };
            let best = corners(&obs, eps)
                .iter()
                .map(|c| objective(net, &obs, c))
                .fold(f64::NEG_INFINITY, f64::max);
            let reached = objective(net, &obs, &res.observation);
            let gap = (best - reached).abs().max((res.objective() - reached).abs());
            s.max_oracle_gap = s.max_oracle_gap.max(gap);
            s.oracle_cases += 1;
        };
        compare(&linear_model(&mut r, dim, HeadKind::DuelingQ, 2), "pgd");
        compare(&linear_model(&mut r, dim, HeadKind::Softmax, 2), "pgd");
        compare(&linear_model(&mut r, dim, HeadKind::Gaussian, 1), "pgd");
        compare(&linear_model(&mut r, dim, HeadKind::Gaussian, 1), "mad");
    }
    s
}

/// `project` output stays inside the box for awkward radii and offsets.
pub fn projection_is_exact(s: &[f64], x: &[f64], eps: f64, range: Option<(f64, f64)>) -> bool {
    let p = project(s, x, eps, range);
    p.iter().zip(s).all(|(p, s)| (p - s).abs() <= eps)
        && range.is_none_or(|(lo, hi)| p.iter().all(|v| (lo..=hi).contains(v)))
}

// Schedules ------------------------------------------------------------------------------

#[derive(Debug, Default, Clone, Copy)]
pub struct ScheduleSummary {
    pub schedules: usize,
    pub points: usize,
    pub monotone_violations: usize,
    pub continuity_violations: usize,
    pub endpoint_violations: usize,
}

pub fn schedule_grid() -> Vec<EpsilonSchedule> {
    let mut out = vec![];
    for ramp in [10u64, 1000, 40_000, 1_000_000] {
        for eps_max in [1.0 / 255.0, 0.1, 0.5] {
            for f in [0.0, 0.25, 0.6] {
                out.push(EpsilonSchedule::SmoothedLinear {
                    ramp_steps: ramp,
                    eps_max,
                    smoothing: f,
                });
            }
            for f in [0.1, 0.25, 0.9] {
                out.push(EpsilonSchedule::ExpThenLinear {
                    ramp_steps: ramp,
                    eps_max,
                    eps_start: 1e-10,
                    exp_fraction: f,
                });
            }
        }
    }
    out
}

/// Monotone; per-step change at most `10·ε_max/T`; start at 0 (or `1e-10`
/// for the exponential ramp); exactly `ε_max` from `T` on.
pub fn schedule_properties() -> ScheduleSummary {
    let mut s = ScheduleSummary::default();
    for sched in schedule_grid() {
        sched.validate().unwrap();
        let (t, eps_max) = (sched.ramp_steps(), sched.eps_max());
        let start = match sched {
            EpsilonSchedule::ExpThenLinear { eps_start, .. } => eps_start,
            _ => 0.0,
        };
        let stride = (t / 20_000).max(1);
        let mut prev = sched.at(0);
        s.endpoint_violations += usize::from(prev != start);
        let mut step = stride;
        while step <= t + 5 * stride {
            let e = sched.at(step);
            s.monotone_violations += usize::from(e < prev);
            s.continuity_violations += usize::from(e - prev > 10.0 * eps_max * stride as f64 / t as f64);
            if step >= t {
                s.endpoint_violations += usize::from(e != eps_max);
            }
            prev = e;
            step += stride;
            s.points += 1;
        }
        s.endpoint_violations += usize::from(sched.at(u64::MAX) != eps_max);
        s.schedules += 1;
    }
    s
}
