//! A point in the square `[-1, 1]²` steered towards a goal.
//!
//! Dynamics with action `a ∈ [-1, 1]^2` (clipped):
//! `vel' = clamp(damping·vel + gain·a, ±1)`, `pos' = clamp(pos + dt·vel', ±1)`.
//! `damping > 1` makes the open-loop dynamics unstable, so the policy must
//! actively hold the point in place.
//! Reward: `offset − scale·‖pos' − goal‖²`, floored at `reward_floor` when set,
//! minus `action_cost·‖a‖²` on the commanded (unclipped) action.
//!
//! Observation: `[pos, vel, goal, distractors…]`. Distractor features are
//! uniform noise in `[-1, 1]`, redrawn every step from the episode's seeded
//! stream; they carry no information about the task.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_fingerprint, fingerprint, Action, ActionSpace, EnvSpec, EnvState, Environment,
    StateData, Step,
};
use crate::error::{Error, Result};
use crate::rng::{seeded, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    pub dt: f64,
    pub damping: f64,
    pub gain: f64,
    pub reward_offset: f64,
    pub reward_scale: f64,
    pub reward_floor: Option<f64>,
    pub action_cost: f64,
    /// Goals are drawn uniformly from `[-goal_range, goal_range]²`.
    pub goal_range: f64,
    /// Starts are drawn uniformly from `[-start_range, start_range]²`.
    pub start_range: f64,
    pub distractor_dims: usize,
    pub max_episode_steps: usize,
    pub discount: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            damping: 0.5,
            gain: 0.5,
            reward_offset: 0.0,
            reward_scale: 1.0,
            reward_floor: None,
            action_cost: 0.0,
            goal_range: 0.5,
            start_range: 0.9,
            distractor_dims: 0,
            max_episode_steps: 50,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct State {
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    distractors: Vec<f64>,
    t: usize,
    done: bool,
    rng: RngState,
}

#[derive(Debug, Clone)]
pub struct PointMass {
    config: PointMassConfig,
    spec: EnvSpec,
    fingerprint: u64,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    distractors: Vec<f64>,
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl PointMass {
    pub fn new(config: PointMassConfig) -> Result<Self> {
        for (name, v) in [
            ("dt", config.dt),
            ("gain", config.gain),
            ("reward_scale", config.reward_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("point_mass.{name}"), "must be positive"));
            }
        }
        if !(0.0..=2.0).contains(&config.damping) {
            return Err(Error::config("point_mass.damping", "must lie in [0, 2]"));
        }
        if !(0.0..=1.0).contains(&config.goal_range) || !(0.0..=1.0).contains(&config.start_range) {
            return Err(Error::config("point_mass.goal_range", "ranges must lie in [0, 1]"));
        }
        let spec = EnvSpec {
            observation_dim: 6 + config.distractor_dims,
            observation_range: Some((-1.0, 1.0)),
            action_space: ActionSpace::ContinuousBox {
                dim: 2,
                low: -1.0,
                high: 1.0,
            },
            max_episode_steps: config.max_episode_steps,
            discount: config.discount,
        };
        spec.validate()?;
        let mut env = Self {
            fingerprint: fingerprint("point_mass", &config),
            spec,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            distractors: vec![0.0; config.distractor_dims],
            t: 0,
            done: false,
            rng: seeded(0, 0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    /// Places the point explicitly (velocity is zeroed).
    pub fn set_state(&mut self, pos: [f64; 2], goal: [f64; 2]) {
        self.pos = pos.map(|p| p.clamp(-1.0, 1.0));
        self.goal = goal.map(|g| g.clamp(-1.0, 1.0));
        self.vel = [0.0; 2];
    }

    fn redraw_distractors(&mut self) {
        for d in &mut self.distractors {
            *d = self.rng.gen_range(-1.0..=1.0);
        }
    }

    fn reward(&self) -> f64 {
        let d2 = (self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2);
        let r = self.config.reward_offset - self.config.reward_scale * d2;
        match self.config.reward_floor {
            Some(f) => r.max(f),
            None => r,
        }
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut init = seeded(seed, 1);
        let (s, g) = (self.config.start_range, self.config.goal_range);
        self.pos = [init.gen_range(-s..=s), init.gen_range(-s..=s)];
        self.goal = [init.gen_range(-g..=g), init.gen_range(-g..=g)];
        self.vel = [0.0; 2];
        self.t = 0;
        self.done = false;
        self.rng = seeded(seed, 2);
        self.redraw_distractors();
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = match action {
            Action::Continuous(a) if a.len() == 2 => a,
            Action::Continuous(a) => {
                return Err(Error::InvalidAction(format!(
                    "expected 2 action dimensions, got {}",
                    a.len()
                )))
            }
            Action::Discrete(_) => {
                return Err(Error::InvalidAction(
                    "discrete action given to a continuous environment".into(),
                ))
            }
        };
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAction("non-finite action".into()));
        }
        let c = &self.config;
        for i in 0..2 {
            let u = a[i].clamp(-1.0, 1.0);
            self.vel[i] = (c.damping * self.vel[i] + c.gain * u).clamp(-1.0, 1.0);
            let p = self.pos[i] + c.dt * self.vel[i];
            if p.abs() > 1.0 {
                self.vel[i] = 0.0;
            }
            self.pos[i] = p.clamp(-1.0, 1.0);
        }
        self.t += 1;
        self.done = self.t >= self.config.max_episode_steps;
        self.redraw_distractors();
        Ok(Step {
            observation: self.observation(),
            reward: self.reward() - self.config.action_cost * (a[0] * a[0] + a[1] * a[1]),
            done: self.done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.spec.observation_dim);
        obs.extend_from_slice(&self.pos);
        obs.extend_from_slice(&self.vel);
        obs.extend_from_slice(&self.goal);
        obs.extend_from_slice(&self.distractors);
        obs
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn snapshot(&self) -> EnvState {
        EnvState {
            fingerprint: self.fingerprint,
            data: StateData::PointMass(State {
                pos: self.pos,
                vel: self.vel,
                goal: self.goal,
                distractors: self.distractors.clone(),
                t: self.t,
                done: self.done,
                rng: RngState::capture(&self.rng),
            }),
        }
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        check_fingerprint(state, self.fingerprint, "point_mass")?;
        let StateData::PointMass(s) = &state.data else {
            return Err(super::foreign("point_mass"));
        };
        self.pos = s.pos;
        self.vel = s.vel;
        self.goal = s.goal;
        self.distractors = s.distractors.clone();
        self.t = s.t;
        self.done = s.done;
        self.rng = s.rng.restore();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_from_rest_keeps_position() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        env.reset(4);
        env.set_state([0.3, -0.2], [0.1, 0.4]);
        let s = env.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(env.position(), [0.3, -0.2]);
        let expected = -((0.3f64 - 0.1).powi(2) + (-0.2f64 - 0.4).powi(2));
        assert!((s.reward - expected).abs() < 1e-15);
    }

    #[test]
    fn action_cost_charges_the_commanded_action() {
        let cfg = PointMassConfig {
            action_cost: 0.3,
            ..Default::default()
        };
        let mut plain = PointMass::new(PointMassConfig::default()).unwrap();
        let mut costly = PointMass::new(cfg).unwrap();
        for env in [&mut plain, &mut costly] {
            env.reset(2);
            env.set_state([0.0, 0.0], [0.5, 0.5]);
        }
        let a = Action::Continuous(vec![3.0, -1.0]);
        let r0 = plain.step(&a).unwrap().reward;
        let r1 = costly.step(&a).unwrap().reward;
        assert_eq!(plain.position(), costly.position());
        assert!((r0 - r1 - 0.3 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn observations_stay_in_range() {
        let mut env = PointMass::new(PointMassConfig {
            distractor_dims: 4,
            ..Default::default()
        })
        .unwrap();
        let mut obs = env.reset(1);
        for t in 0..50 {
            assert!(obs.iter().all(|v| (-1.0..=1.0).contains(v)));
            let a = if t % 2 == 0 { 5.0 } else { -5.0 };
            obs = env.step(&Action::Continuous(vec![a, 1.0])).unwrap().observation;
        }
        assert!(env.is_done());
    }

    #[test]
    fn snapshot_restores_noise_stream() {
        let mut env = PointMass::new(PointMassConfig {
            distractor_dims: 3,
            ..Default::default()
        })
        .unwrap();
        env.reset(9);
        let snap = env.snapshot();
        let a = Action::Continuous(vec![0.4, -0.1]);
        let s1 = env.step(&a).unwrap();
        env.restore(&snap).unwrap();
        assert_eq!(env.step(&a).unwrap(), s1);
    }

    #[test]
    fn rejects_wrong_action_kind() {
        let mut env = PointMass::new(PointMassConfig::default()).unwrap();
        env.reset(0);
        assert!(env.step(&Action::Discrete(0)).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }
}
