//! Explicit tiny deterministic MDPs: `next[s][a]`, `reward[s][a]`, optional
//! terminal states and a fixed horizon. Observations are one-hot states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_fingerprint, discrete_action, fingerprint, hash_state, Action, ActionSpace, EnvSpec,
    EnvState, Environment, StateData, Step,
};
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdpConfig {
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
    #[serde(default)]
    pub terminal: Vec<bool>,
    #[serde(default)]
    pub start: usize,
    pub horizon: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
}

fn default_discount() -> f64 {
    0.99
}

impl TabularMdpConfig {
    /// Random MDP with rewards in `{0, 0.5, 1}` and roughly one terminal state in five.
    pub fn random(states: usize, actions: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, 7);
        let next = (0..states)
            .map(|_| (0..actions).map(|_| rng.gen_range(0..states)).collect())
            .collect();
        let reward = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| f64::from(rng.gen_range(0..3u8)) * 0.5)
                    .collect()
            })
            .collect();
        let terminal = (0..states).map(|s| s != 0 && rng.gen_bool(0.2)).collect();
        Self {
            next,
            reward,
            terminal,
            start: 0,
            horizon,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct State {
    s: usize,
    t: usize,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct TabularMdp {
    config: TabularMdpConfig,
    spec: EnvSpec,
    fingerprint: u64,
    s: usize,
    t: usize,
    done: bool,
}

impl TabularMdp {
    pub fn new(config: TabularMdpConfig) -> Result<Self> {
        let n = config.next.len();
        let k = config.next.first().map_or(0, |r| r.len());
        if n == 0 || k < 2 {
            return Err(Error::config("tabular.next", "need states and at least 2 actions"));
        }
        if config.next.iter().any(|r| r.len() != k || r.iter().any(|&s| s >= n)) {
            return Err(Error::config("tabular.next", "ragged table or state out of range"));
        }
        if config.reward.len() != n
            || config.reward.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::config("tabular.reward", "must match next and be finite"));
        }
        if !config.terminal.is_empty() && config.terminal.len() != n {
            return Err(Error::config("tabular.terminal", "one flag per state"));
        }
        if config.start >= n {
            return Err(Error::config("tabular.start", "out of range"));
        }
        let spec = EnvSpec {
            observation_dim: n,
            observation_range: Some((0.0, 1.0)),
            action_space: ActionSpace::Discrete { n: k },
            max_episode_steps: config.horizon,
            discount: config.discount,
        };
        spec.validate()?;
        Ok(Self {
            fingerprint: fingerprint("tabular_mdp", &config),
            spec,
            s: config.start,
            t: 0,
            done: false,
            config,
        })
    }

    pub fn state(&self) -> usize {
        self.s
    }

    pub fn config(&self) -> &TabularMdpConfig {
        &self.config
    }
}

impl Environment for TabularMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.s = self.config.start;
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete_action(action, self.spec.action_space.size())?;
        let reward = self.config.reward[self.s][a];
        self.s = self.config.next[self.s][a];
        self.t += 1;
        let terminal = self.config.terminal.get(self.s).copied().unwrap_or(false);
        self.done = terminal || self.t >= self.config.horizon;
        Ok(Step {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.observation_dim];
        obs[self.s] = 1.0;
        obs
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn snapshot(&self) -> EnvState {
        EnvState {
            fingerprint: self.fingerprint,
            data: StateData::Tabular(State {
                s: self.s,
                t: self.t,
                done: self.done,
            }),
        }
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        check_fingerprint(state, self.fingerprint, "tabular_mdp")?;
        let StateData::Tabular(s) = &state.data else {
            return Err(super::foreign("tabular_mdp"));
        };
        self.s = s.s;
        self.t = s.t;
        self.done = s.done;
        Ok(())
    }

    fn state_key(&self) -> Option<u64> {
        Some(hash_state(&(self.s, self.t, self.done)))
    }
}
