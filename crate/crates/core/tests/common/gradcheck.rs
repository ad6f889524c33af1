//! Reverse-mode gradients of every training loss against central finite
//! differences over all network parameters.
//!
//! Quantities the losses treat as constants (value gaps, advantages) are
//! frozen at the base network for the finite-difference side; where a loss
//! derives them internally, the reference is an independent composition of
//! tape primitives with those quantities held fixed.

use super::{random_net, random_steps, random_transitions, rng};
use rand::Rng;
use radial_core::agents::{
    a3c_nominal_loss_vars, dqn_nominal_loss_vars, log_prob_vars, loss_and_grads,
    mean_entropy_vars, ppo_nominal_loss_vars, stack_obs, PpoCoefficients, TrajectoryStep,
};
use radial_core::env::Action;
use radial_core::nn::{BoundVars, HeadKind, HeadValues, HeadVars, NetVars, Network};
use radial_core::radial::{
    a3c_worst_case_vars, combined_loss_vars, dqn_overlap_vars, dqn_training_loss_vars,
    dqn_worst_case_vars, forward_with_bounds, log_prob_bounds_for, policy_overlap_vars,
    ppo_worst_case_vars, Approach, RadialConfig,
};
use radial_core::{Result, Tape, Tensor, Var};

pub const INSTANCES: u64 = 50;
const H: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

type Build<'a> = dyn Fn(&mut Tape, &Network, &NetVars) -> Result<Var> + 'a;

fn value(net: &Network, build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let l = build(&mut tape, net, &vars).unwrap();
    tape.value(l).item()
}

/// `‖g_autodiff − g_fd‖∞ / max(‖g_autodiff‖∞, ‖g_fd‖∞)` over all parameters.
fn relative_error(net: &Network, build: &Build, reference: &Build) -> f64 {
    let (v, grads) = loss_and_grads(net, |t, v| build(t, net, v)).unwrap();
    let r = value(net, reference);
    assert!((v - r).abs() <= 1e-12 * (1.0 + v.abs()), "reference value {r} vs {v}");
    let build = reference;
    let shapes: Vec<Vec<usize>> = net.parameters().iter().map(|p| p.shape().to_vec()).collect();
    let (mut diff, mut scale) = (0.0f64, 1e-8f64);
    for (pi, shape) in shapes.iter().enumerate() {
        let len: usize = shape.iter().product();
        for j in 0..len {
            let bumped = |delta: f64| {
                let mut n = net.clone();
                let p = &mut n.parameters_mut()[pi];
                let mut data = p.data().to_vec();
                data[j] += delta;
                **p = Tensor::new(shape.clone(), data).unwrap();
                value(&n, build)
            };
            let fd = (bumped(H) - bumped(-H)) / (2.0 * H);
            let ad = grads[pi].as_ref().map_or(0.0, |g| g.data()[j]);
            diff = diff.max((ad - fd).abs());
            scale = scale.max(ad.abs()).max(fd.abs());
        }
    }
    diff / scale
}

struct Instance {
    net: Network,
    dim: usize,
    epsilon: f64,
    seed: u64,
}

fn instance(seed: u64, head: HeadKind) -> Instance {
    let mut r = rng(seed);
    let dim = r.gen_range(2..=4);
    let outputs = r.gen_range(2..=3);
    let net = random_net(&mut r, dim, head, outputs, 2, 6);
    Instance {
        net,
        dim,
        epsilon: r.gen_range(0.01..0.3),
        seed,
    }
}

type Pair = (Box<Build<'static>>, Option<Box<Build<'static>>>);

/// Largest relative error over `INSTANCES` random instances.
fn check(heads: &[HeadKind], make: impl Fn(&Instance) -> Pair) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let head = heads[i as usize % heads.len()];
        let inst = instance(1000 * i + 7, head);
        let (build, reference) = make(&inst);
        let reference = reference.as_deref().unwrap_or(build.as_ref());
        worst = worst.max(relative_error(&inst.net, build.as_ref(), reference));
    }
    worst
}

fn q_data(inst: &Instance) -> (Tensor, Vec<usize>, Vec<f64>) {
    let mut r = rng(inst.seed + 1);
    let k = inst.net.num_outputs();
    let batch = random_transitions(&mut r, 5, inst.dim, k);
    let obs = stack_obs(batch.iter().map(|t| t.obs.as_slice())).unwrap();
    let actions = batch.iter().map(|t| t.action).collect();
    let targets = batch.iter().map(|_| r.gen_range(-2.0..2.0)).collect();
    (obs, actions, targets)
}

fn traj(inst: &Instance) -> Vec<TrajectoryStep> {
    let mut r = rng(inst.seed + 2);
    random_steps(&mut r, 5, inst.dim, inst.net.head_kind(), inst.net.num_outputs())
}

fn bounded(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    obs: Tensor,
    eps: f64,
) -> Result<(HeadVars, BoundVars)> {
    forward_with_bounds(tape, net, vars, obs, eps, None)
}

fn q_of(h: &HeadVars) -> Var {
    match h {
        HeadVars::Q { q, .. } => *q,
        _ => unreachable!(),
    }
}

fn plain(b: Box<Build<'static>>) -> Pair {
    (b, None)
}

fn clean_q(net: &Network, obs: &Tensor) -> Tensor {
    match net.forward(obs).unwrap() {
        HeadValues::Q { q, .. } => q,
        _ => unreachable!(),
    }
}

fn clean_logits(net: &Network, obs: &Tensor) -> Tensor {
    match net.forward(obs).unwrap() {
        HeadValues::Policy { logits, .. } => logits,
        _ => unreachable!(),
    }
}

fn steps_obs(steps: &[TrajectoryStep]) -> Tensor {
    stack_obs(steps.iter().map(|s| s.obs.as_slice())).unwrap()
}

/// `A = R − V(s)` at the base network.
fn frozen_advantages(net: &Network, steps: &[TrajectoryStep]) -> Vec<f64> {
    steps
        .iter()
        .map(|s| s.return_target - net.state_value(&s.obs).unwrap())
        .collect()
}

/// `mean((R − V)² − A₀·log π) − β·H` with `log π` supplied by `log_prob`.
fn actor_critic_reference(
    steps: Vec<TrajectoryStep>,
    adv0: Vec<f64>,
    eps: Option<f64>,
    beta: f64,
) -> Box<Build<'static>> {
    Box::new(move |t, net, v| {
        let obs = steps_obs(&steps);
        let (head, bounds) = match eps {
            Some(e) => {
                let (h, b) = bounded(t, net, v, obs, e)?;
                (h, Some(b))
            }
            None => {
                let x = t.constant(obs);
                (net.forward_vars(t, v, x)?, None)
            }
        };
        let actions: Vec<&Action> = steps.iter().map(|s| &s.action).collect();
        let lp = match bounds {
            None => log_prob_vars(t, &head, &actions)?,
            Some(b) => {
                let (lo, hi) = log_prob_bounds_for(t, &head, &b, &actions)?;
                let pos: Vec<f64> = adv0.iter().map(|&a| f64::from(u8::from(a >= 0.0))).collect();
                let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
                let mp = t.constant(Tensor::vector(pos)?);
                let mn = t.constant(Tensor::vector(neg)?);
                let l = t.mul(lo, mp)?;
                let h = t.mul(hi, mn)?;
                t.add(l, h)?
            }
        };
        let r = t.constant(Tensor::vector(steps.iter().map(|s| s.return_target).collect())?);
        let value = head.value().unwrap();
        let d = t.sub(r, value)?;
        let sq = t.square(d);
        let a0 = t.constant(Tensor::vector(adv0.clone())?);
        let pg = t.mul(a0, lp)?;
        let per = t.sub(sq, pg)?;
        let m = t.mean(per);
        let h = mean_entropy_vars(t, &head)?;
        let bh = t.scale(h, beta);
        t.sub(m, bh)
    })
}

pub fn td_loss() -> f64 {
    check(&[HeadKind::DuelingQ], |inst| {
        let (obs, actions, targets) = q_data(inst);
        plain(Box::new(move |t, net, v| {
            let x = t.constant(obs.clone());
            let head = net.forward_vars(t, v, x)?;
            dqn_nominal_loss_vars(t, &head, &actions, &targets)
        }))
    })
}

pub fn actor_critic_loss() -> f64 {
    check(&[HeadKind::Softmax, HeadKind::Gaussian], |inst| {
        let steps = traj(inst);
        let adv0 = frozen_advantages(&inst.net, &steps);
        let reference = actor_critic_reference(steps.clone(), adv0, None, 0.01);
        let build: Box<Build> = Box::new(move |t, net, v| {
            let refs: Vec<&TrajectoryStep> = steps.iter().collect();
            let x = t.constant(steps_obs(&steps));
            let head = net.forward_vars(t, v, x)?;
            Ok(a3c_nominal_loss_vars(t, &head, &refs, 0.01)?.0)
        });
        (build, Some(reference))
    })
}

pub fn actor_critic_worst_case_loss() -> f64 {
    check(&[HeadKind::Softmax, HeadKind::Gaussian], |inst| {
        let steps = traj(inst);
        let eps = inst.epsilon;
        let adv0 = frozen_advantages(&inst.net, &steps);
        let reference = actor_critic_reference(steps.clone(), adv0, Some(eps), 0.01);
        let build: Box<Build> = Box::new(move |t, net, v| {
            let refs: Vec<&TrajectoryStep> = steps.iter().collect();
            let (clean, b) = bounded(t, net, v, steps_obs(&steps), eps)?;
            a3c_worst_case_vars(t, &clean, &b, &refs, 0.01)
        });
        (build, Some(reference))
    })
}

fn ppo_coef() -> PpoCoefficients {
    PpoCoefficients {
        entropy: 0.01,
        ..Default::default()
    }
}

pub fn ppo_loss() -> f64 {
    check(&[HeadKind::Gaussian, HeadKind::Softmax], |inst| {
        let steps = traj(inst);
        plain(Box::new(move |t, net, v| {
            let refs: Vec<&TrajectoryStep> = steps.iter().collect();
            let x = t.constant(steps_obs(&steps));
            let head = net.forward_vars(t, v, x)?;
            ppo_nominal_loss_vars(t, &head, &refs, &ppo_coef())
        }))
    })
}

pub fn ppo_worst_case_loss() -> f64 {
    check(&[HeadKind::Gaussian, HeadKind::Softmax], |inst| {
        let steps = traj(inst);
        let eps = inst.epsilon;
        plain(Box::new(move |t, net, v| {
            let refs: Vec<&TrajectoryStep> = steps.iter().collect();
            let (clean, b) = bounded(t, net, v, steps_obs(&steps), eps)?;
            ppo_worst_case_vars(t, &clean, &b, &refs, &ppo_coef())
        }))
    })
}

fn overlap(symmetric: bool) -> impl Fn(&Instance) -> Pair {
    move |inst| {
        let (obs, actions, _) = q_data(inst);
        let q0 = clean_q(&inst.net, &obs);
        let eps = inst.epsilon;
        plain(Box::new(move |t, net, v| {
            let (_, b) = bounded(t, net, v, obs.clone(), eps)?;
            dqn_overlap_vars(t, &q0, b.lower(), b.upper(), &actions, 0.5, symmetric)
        }))
    }
}

pub fn q_overlap_loss() -> f64 {
    check(&[HeadKind::DuelingQ], overlap(false))
}

pub fn q_overlap_symmetric_loss() -> f64 {
    check(&[HeadKind::DuelingQ], overlap(true))
}

pub fn policy_overlap_loss() -> f64 {
    check(&[HeadKind::Softmax], |inst| {
        let steps = traj(inst);
        let eps = inst.epsilon;
        let z0 = clean_logits(&inst.net, &steps_obs(&steps));
        plain(Box::new(move |t, net, v| {
            let idx: Vec<usize> = steps.iter().map(|s| s.action.discrete().unwrap()).collect();
            let (_, b) = bounded(t, net, v, steps_obs(&steps), eps)?;
            policy_overlap_vars(t, &z0, b.lower(), b.upper(), &idx, 0.5)
        }))
    })
}

pub fn td_worst_case_loss() -> f64 {
    check(&[HeadKind::DuelingQ], |inst| {
        let (obs, actions, targets) = q_data(inst);
        let eps = inst.epsilon;
        plain(Box::new(move |t, net, v| {
            let (clean, b) = bounded(t, net, v, obs.clone(), eps)?;
            let BoundVars::Q { sound_lower, sound_upper, .. } = b else { unreachable!() };
            dqn_worst_case_vars(t, q_of(&clean), sound_lower, sound_upper, &actions, &targets)
        }))
    })
}

/// The full DQN training loss `κ·nominal + (1 − κ)·adversarial`.
pub fn combined_dqn_loss(approach: Approach) -> f64 {
    check(&[HeadKind::DuelingQ], |inst| {
        let (obs, actions, targets) = q_data(inst);
        let eps = inst.epsilon;
        let cfg = RadialConfig {
            approach,
            ..Default::default()
        };
        let q0 = clean_q(&inst.net, &obs);
        let (o, a, tg) = (obs.clone(), actions.clone(), targets.clone());
        let build: Box<Build> = Box::new(move |t, net, v| {
            let l = dqn_training_loss_vars(t, net, v, o.clone(), &a, &tg, eps, None, Some(&cfg))?;
            Ok(l.total)
        });
        if approach == Approach::One {
            return (build, None);
        }
        let reference: Box<Build> = Box::new(move |t, net, v| {
            let (clean, b) = bounded(t, net, v, obs.clone(), eps)?;
            let nominal = dqn_nominal_loss_vars(t, &clean, &actions, &targets)?;
            let sym = approach == Approach::TwoSymmetric;
            let adv = dqn_overlap_vars(t, &q0, b.lower(), b.upper(), &actions, cfg.margin, sym)?;
            combined_loss_vars(t, nominal, adv, cfg.kappa)
        });
        (build, Some(reference))
    })
}
