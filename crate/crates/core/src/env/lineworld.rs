//! A 1-D chain of cells. Actions are `0 = left`, `1 = right`; the end cells
//! are terminal (unless disabled). Entering a cell pays its reward.

use serde::{Deserialize, Serialize};

use super::{
    check_fingerprint, discrete_action, fingerprint, hash_state, Action, ActionSpace, EnvSpec,
    EnvState, Environment, StateData, Step,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineWorldConfig {
    pub length: usize,
    pub start: usize,
    pub left_reward: f64,
    pub right_reward: f64,
    pub step_reward: f64,
    /// Per-cell entry rewards; overrides the three fields above when given.
    pub cell_rewards: Option<Vec<f64>>,
    pub terminal_ends: bool,
    pub max_episode_steps: usize,
    pub discount: f64,
}

impl Default for LineWorldConfig {
    fn default() -> Self {
        Self {
            length: 5,
            start: 2,
            left_reward: 0.0,
            right_reward: 1.0,
            step_reward: 0.0,
            cell_rewards: None,
            terminal_ends: true,
            max_episode_steps: 20,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct State {
    pos: usize,
    t: usize,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct LineWorld {
    config: LineWorldConfig,
    spec: EnvSpec,
    fingerprint: u64,
    pos: usize,
    t: usize,
    done: bool,
}

impl LineWorld {
    pub fn new(config: LineWorldConfig) -> Result<Self> {
        if config.length < 2 {
            return Err(Error::config("line_world.length", "must be at least 2"));
        }
        if config.start >= config.length {
            return Err(Error::config("line_world.start", "must be inside the chain"));
        }
        if let Some(r) = &config.cell_rewards {
            if r.len() != config.length || r.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    "line_world.cell_rewards",
                    "need one finite reward per cell",
                ));
            }
        }
        let spec = EnvSpec {
            observation_dim: config.length,
            observation_range: Some((0.0, 1.0)),
            action_space: ActionSpace::Discrete { n: 2 },
            max_episode_steps: config.max_episode_steps,
            discount: config.discount,
        };
        spec.validate()?;
        Ok(Self {
            fingerprint: fingerprint("line_world", &config),
            spec,
            pos: config.start,
            t: 0,
            done: false,
            config,
        })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn reward_for(&self, cell: usize) -> f64 {
        if let Some(r) = &self.config.cell_rewards {
            return r[cell];
        }
        if cell == 0 {
            self.config.left_reward
        } else if cell == self.config.length - 1 {
            self.config.right_reward
        } else {
            self.config.step_reward
        }
    }
}

impl Environment for LineWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.config.start;
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete_action(action, 2)?;
        let last = self.config.length - 1;
        self.pos = if a == 0 {
            self.pos.saturating_sub(1)
        } else {
            (self.pos + 1).min(last)
        };
        self.t += 1;
        let reward = self.reward_for(self.pos);
        if (self.config.terminal_ends && (self.pos == 0 || self.pos == last))
            || self.t >= self.config.max_episode_steps
        {
            self.done = true;
        }
        Ok(Step {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.config.length];
        obs[self.pos] = 1.0;
        obs
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn snapshot(&self) -> EnvState {
        EnvState {
            fingerprint: self.fingerprint,
            data: StateData::LineWorld(State {
                pos: self.pos,
                t: self.t,
                done: self.done,
            }),
        }
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        check_fingerprint(state, self.fingerprint, "line_world")?;
        let StateData::LineWorld(s) = &state.data else {
            return Err(super::foreign("line_world"));
        };
        self.pos = s.pos;
        self.t = s.t;
        self.done = s.done;
        Ok(())
    }

    fn state_key(&self) -> Option<u64> {
        Some(hash_state(&(self.pos, self.t, self.done)))
    }
}
