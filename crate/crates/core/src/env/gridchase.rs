//! A road-crossing grid: the agent starts on the bottom row and must reach
//! the top row while hazards sweep horizontally across the rows between.
//!
//! Actions are `0 = up`, `1 = down`, `2 = stay`. The agent's column is fixed
//! at the centre. After the agent moves, every hazard whose period divides
//! the new step count advances one cell (wrapping around). The agent is hit
//! when it shares a row with a hazard that was or is now in its column; a
//! hit sends it back to the start row. Reaching row 0 pays `+1` and ends the
//! episode; otherwise the episode ends at the step limit with reward 0, so
//! episode returns are always 0 or 1.
//!
//! The observation is two flattened `size × size` one-hot planes: the agent
//! position, then the hazard positions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_fingerprint, discrete_action, fingerprint, hash_state, Action, ActionSpace, EnvSpec,
    EnvState, Environment, StateData, Step,
};
use crate::error::{Error, Result};
use crate::rng::{seeded, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridChaseConfig {
    pub size: usize,
    pub max_episode_steps: usize,
    /// Rows carrying one hazard each; defaults to every row strictly between goal and start.
    pub hazard_rows: Option<Vec<usize>>,
    /// Largest hazard period (a hazard moves once every `period` steps).
    pub max_period: usize,
    /// When set, each hazard independently skips a move with this probability.
    pub stall_probability: Option<f64>,
    pub discount: f64,
}

impl Default for GridChaseConfig {
    fn default() -> Self {
        Self {
            size: 5,
            max_episode_steps: 20,
            hazard_rows: None,
            max_period: 2,
            stall_probability: None,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hazard {
    pub row: usize,
    pub col: usize,
    /// `+1` moves right, `-1` moves left.
    pub dir: i8,
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct State {
    row: usize,
    t: usize,
    done: bool,
    hazards: Vec<Hazard>,
    rng: RngState,
}

#[derive(Debug, Clone)]
pub struct GridChase {
    config: GridChaseConfig,
    spec: EnvSpec,
    fingerprint: u64,
    row: usize,
    t: usize,
    done: bool,
    hazards: Vec<Hazard>,
    rng: ChaCha8Rng,
}

impl GridChase {
    pub fn new(config: GridChaseConfig) -> Result<Self> {
        if config.size < 3 {
            return Err(Error::config("grid_chase.size", "must be at least 3"));
        }
        if config.max_period == 0 {
            return Err(Error::config("grid_chase.max_period", "must be at least 1"));
        }
        if let Some(rows) = &config.hazard_rows {
            if rows.iter().any(|&r| r == 0 || r >= config.size - 1) {
                return Err(Error::config(
                    "grid_chase.hazard_rows",
                    "hazards must sit strictly between the goal and start rows",
                ));
            }
        }
        if let Some(p) = config.stall_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("grid_chase.stall_probability", "must lie in [0, 1]"));
            }
        }
        let spec = EnvSpec {
            observation_dim: 2 * config.size * config.size,
            observation_range: Some((0.0, 1.0)),
            action_space: ActionSpace::Discrete { n: 3 },
            max_episode_steps: config.max_episode_steps,
            discount: config.discount,
        };
        spec.validate()?;
        let mut env = Self {
            fingerprint: fingerprint("grid_chase", &config),
            spec,
            row: config.size - 1,
            t: 0,
            done: false,
            hazards: Vec::new(),
            rng: seeded(0, 0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &GridChaseConfig {
        &self.config
    }

    pub fn hazards(&self) -> &[Hazard] {
        &self.hazards
    }

    pub fn agent_row(&self) -> usize {
        self.row
    }

    pub fn agent_col(&self) -> usize {
        self.config.size / 2
    }

    /// Replaces the hazard layout of the current episode.
    pub fn set_hazards(&mut self, hazards: Vec<Hazard>) -> Result<()> {
        let n = self.config.size;
        for h in &hazards {
            if h.row == 0 || h.row >= n - 1 || h.col >= n || h.period == 0 || h.dir.abs() != 1 {
                return Err(Error::param("hazard", format!("invalid hazard {h:?}")));
            }
        }
        self.hazards = hazards;
        Ok(())
    }

    fn hazard_rows(&self) -> Vec<usize> {
        match &self.config.hazard_rows {
            Some(rows) => rows.clone(),
            None => (1..self.config.size - 1).collect(),
        }
    }
}

impl Environment for GridChase {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut layout = seeded(seed, 1);
        let n = self.config.size;
        self.hazards = self
            .hazard_rows()
            .into_iter()
            .map(|row| Hazard {
                row,
                col: layout.gen_range(0..n),
                dir: if layout.gen_bool(0.5) { 1 } else { -1 },
                period: layout.gen_range(1..=self.config.max_period),
            })
            .collect();
        self.rng = seeded(seed, 2);
        self.row = n - 1;
        self.t = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete_action(action, 3)?;
        let n = self.config.size;
        match a {
            0 => self.row = self.row.saturating_sub(1),
            1 => self.row = (self.row + 1).min(n - 1),
            _ => {}
        }
        self.t += 1;
        let col = self.agent_col();
        let mut hit = false;
        for h in &mut self.hazards {
            let old = h.col;
            let stalled = match self.config.stall_probability {
                Some(p) => self.rng.gen_bool(p),
                None => false,
            };
            if self.t.is_multiple_of(h.period) && !stalled {
                h.col = (h.col as isize + h.dir as isize).rem_euclid(n as isize) as usize;
            }
            if h.row == self.row && (old == col || h.col == col) {
                hit = true;
            }
        }
        let mut reward = 0.0;
        if self.row == 0 {
            reward = 1.0;
            self.done = true;
        } else if hit {
            self.row = n - 1;
        }
        if self.t >= self.config.max_episode_steps {
            self.done = true;
        }
        Ok(Step {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let n = self.config.size;
        let mut obs = vec![0.0; 2 * n * n];
        obs[self.row * n + self.agent_col()] = 1.0;
        for h in &self.hazards {
            obs[n * n + h.row * n + h.col] = 1.0;
        }
        obs
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn snapshot(&self) -> EnvState {
        EnvState {
            fingerprint: self.fingerprint,
            data: StateData::GridChase(State {
                row: self.row,
                t: self.t,
                done: self.done,
                hazards: self.hazards.clone(),
                rng: RngState::capture(&self.rng),
            }),
        }
    }

    fn restore(&mut self, state: &EnvState) -> Result<()> {
        check_fingerprint(state, self.fingerprint, "grid_chase")?;
        let StateData::GridChase(s) = &state.data else {
            return Err(super::foreign("grid_chase"));
        };
        self.row = s.row;
        self.t = s.t;
        self.done = s.done;
        self.hazards = s.hazards.clone();
        self.rng = s.rng.restore();
        Ok(())
    }

    fn is_deterministic(&self) -> bool {
        self.config.stall_probability.is_none_or(|p| p == 0.0)
    }

    fn state_key(&self) -> Option<u64> {
        if !self.is_deterministic() {
            return None;
        }
        Some(hash_state(&(self.row, self.t, self.done, &self.hazards)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up() -> Action {
        Action::Discrete(0)
    }

    #[test]
    fn clear_road_reaches_goal_in_four_steps() {
        let mut env = GridChase::new(GridChaseConfig {
            hazard_rows: Some(vec![]),
            ..Default::default()
        })
        .unwrap();
        env.reset(3);
        for i in 0..4 {
            let s = env.step(&up()).unwrap();
            assert_eq!(s.done, i == 3);
            assert_eq!(s.reward, if i == 3 { 1.0 } else { 0.0 });
        }
        assert!(matches!(env.step(&up()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn hand_simulated_crossing_avoids_hazards() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        env.reset(0);
        // Hazards moving away from the centre column never touch it within 4 steps.
        env.set_hazards(vec![
            Hazard { row: 1, col: 4, dir: 1, period: 2 },
            Hazard { row: 2, col: 0, dir: -1, period: 2 },
            Hazard { row: 3, col: 4, dir: -1, period: 2 },
        ])
        .unwrap();
        // Row 3 hazard: t=1 stays at 4, t=2 -> 3. Agent enters row 3 at t=1: safe.
        let mut total = 0.0;
        let mut done = false;
        for _ in 0..4 {
            let s = env.step(&up()).unwrap();
            total += s.reward;
            done = s.done;
        }
        assert!(done);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn collision_resets_to_start() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        env.reset(0);
        env.set_hazards(vec![Hazard { row: 3, col: 1, dir: 1, period: 1 }]).unwrap();
        let s = env.step(&up()).unwrap();
        assert_eq!(env.agent_row(), 4);
        assert_eq!(s.reward, 0.0);
        assert!(!s.done);
    }

    #[test]
    fn seeds_give_distinct_layouts_and_repeat_exactly() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        let a = env.reset(0);
        let b = env.reset(1);
        assert_ne!(a, b);
        assert_eq!(env.reset(0), a);
    }

    #[test]
    fn snapshot_restore_replays() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        env.reset(5);
        env.step(&Action::Discrete(2)).unwrap();
        let snap = env.snapshot();
        let first = env.step(&up()).unwrap();
        env.restore(&snap).unwrap();
        assert_eq!(env.snapshot(), snap);
        assert_eq!(env.step(&up()).unwrap(), first);
    }

    #[test]
    fn observations_are_binary() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        let obs = env.reset(11);
        assert!(obs.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(obs.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn invalid_action_rejected() {
        let mut env = GridChase::new(GridChaseConfig::default()).unwrap();
        env.reset(0);
        assert!(matches!(
            env.step(&Action::Discrete(3)),
            Err(Error::ActionOutOfRange { .. })
        ));
    }
}
