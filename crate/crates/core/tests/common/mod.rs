//! Random instances shared by the integration suites.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use radial_core::agents::{Transition, TrajectoryStep};
use radial_core::env::Action;
use radial_core::nn::{HeadKind, Network, NetworkSpec};
use radial_core::rng::seeded;
use radial_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded(seed, 0xC0FFEE)
}

/// Dense ReLU network with `1..=max_layers` hidden layers of `1..=max_width` units.
pub fn random_net(
    rng: &mut ChaCha8Rng,
    input_dim: usize,
    head: HeadKind,
    outputs: usize,
    max_layers: usize,
    max_width: usize,
) -> Network {
    let layers = rng.gen_range(1..=max_layers);
    let hidden = (0..layers).map(|_| rng.gen_range(1..=max_width)).collect();
    let spec = NetworkSpec {
        input_dim,
        hidden,
        head,
        outputs,
        initial_log_std: rng.gen_range(-1.0..0.0),
        head_scale: 1.0,
    };
    let mut net = Network::new(&spec, rng).unwrap();
    // Non-zero biases and log-stds, so nothing sits on a symmetric point.
    for p in net.parameters_mut() {
        if p.rank() == 1 {
            let data = p.data().iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
            *p = Tensor::new(p.shape().to_vec(), data).unwrap();
        }
    }
    net
}

pub fn random_obs(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_transitions(rng: &mut ChaCha8Rng, n: usize, dim: usize, actions: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            obs: random_obs(rng, dim),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(-1.0..1.0),
            next_obs: random_obs(rng, dim),
            done: rng.gen_bool(0.2),
        })
        .collect()
}

/// Trajectory rows with random actions, returns, advantages and old log-probabilities.
pub fn random_steps(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    head: HeadKind,
    outputs: usize,
) -> Vec<TrajectoryStep> {
    (0..n)
        .map(|_| {
            let action = match head {
                HeadKind::Gaussian => {
                    Action::Continuous((0..outputs).map(|_| rng.gen_range(-1.5..1.5)).collect())
                }
                _ => Action::Discrete(rng.gen_range(0..outputs)),
            };
            TrajectoryStep {
                obs: random_obs(rng, dim),
                action,
                reward: rng.gen_range(-1.0..1.0),
                done: false,
                log_prob_old: rng.gen_range(-2.5..-0.5),
                value_old: rng.gen_range(-1.0..1.0),
                advantage: rng.gen_range(-1.0..1.0),
                return_target: rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}
