//! Small deterministic environments with exact snapshot/restore.
//!
//! - [`GridChase`]: cross a road of moving hazards (discrete, 3 actions).
//! - [`LineWorld`]: a 1-D chain, handy for hand-checkable oracles.
//! - [`PointMass`]: 2-D point steered to a goal (continuous box actions).
//! - [`TabularMdp`]: arbitrary tiny deterministic MDPs for search oracles.
//!
//! Every environment can be built from an [`EnvConfig`], which is what the
//! harness stores in config files and checkpoints.

mod gridchase;
mod lineworld;
mod pointmass;
mod tabular;

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gridchase::{GridChase, GridChaseConfig, Hazard};
pub use lineworld::{LineWorld, LineWorldConfig};
pub use pointmass::{PointMass, PointMassConfig};
pub use tabular::{TabularMdp, TabularMdpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    ContinuousBox { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    /// Number of discrete actions or continuous dimensions.
    pub fn size(&self) -> usize {
        match *self {
            ActionSpace::Discrete { n } => n,
            ActionSpace::ContinuousBox { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub observation_range: Option<(f64, f64)>,
    pub action_space: ActionSpace,
    pub max_episode_steps: usize,
    pub discount: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.observation_dim == 0 {
            return Err(Error::param("observation_dim", "must be positive"));
        }
        if let Some((lo, hi)) = self.observation_range {
            if !(lo < hi) {
                return Err(Error::param("observation_range", "lo must be below hi"));
            }
        }
        match self.action_space {
            ActionSpace::Discrete { n } if n < 2 => {
                return Err(Error::param("action_space", "need at least 2 discrete actions"))
            }
            ActionSpace::ContinuousBox { dim, low, high } if dim == 0 || !(low < high) => {
                return Err(Error::param("action_space", "empty continuous box"))
            }
            _ => {}
        }
        if self.max_episode_steps == 0 {
            return Err(Error::param("max_episode_steps", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::param("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Opaque environment snapshot, tagged with the identity of the environment
/// configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    fingerprint: u64,
    data: StateData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum StateData {
    GridChase(gridchase::State),
    LineWorld(lineworld::State),
    PointMass(pointmass::State),
    Tabular(tabular::State),
}

/// Common interface of all environments.
pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Deterministic initial state for `seed`; returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
    fn observation(&self) -> Vec<f64>;
    fn is_done(&self) -> bool;
    fn snapshot(&self) -> EnvState;
    fn restore(&mut self, state: &EnvState) -> Result<()>;
    /// `false` when transitions draw from an internal random stream.
    fn is_deterministic(&self) -> bool {
        true
    }
    /// Hash of the full state, for environments with cheaply hashable state.
    fn state_key(&self) -> Option<u64> {
        None
    }
}

/// Serializable choice of environment and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    GridChase(GridChaseConfig),
    LineWorld(LineWorldConfig),
    PointMass(PointMassConfig),
    TabularMdp(TabularMdpConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<AnyEnv> {
        Ok(match self {
            EnvConfig::GridChase(c) => AnyEnv::GridChase(GridChase::new(c.clone())?),
            EnvConfig::LineWorld(c) => AnyEnv::LineWorld(LineWorld::new(c.clone())?),
            EnvConfig::PointMass(c) => AnyEnv::PointMass(PointMass::new(c.clone())?),
            EnvConfig::TabularMdp(c) => AnyEnv::Tabular(TabularMdp::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::GridChase(_) => "grid_chase",
            EnvConfig::LineWorld(_) => "line_world",
            EnvConfig::PointMass(_) => "point_mass",
            EnvConfig::TabularMdp(_) => "tabular_mdp",
        }
    }
}

/// Any of the shipped environments behind one concrete type.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    GridChase(GridChase),
    LineWorld(LineWorld),
    PointMass(PointMass),
    Tabular(TabularMdp),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::GridChase($e) => $body,
            AnyEnv::LineWorld($e) => $body,
            AnyEnv::PointMass($e) => $body,
            AnyEnv::Tabular($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn spec(&self) -> &EnvSpec {
        delegate!(self, e => e.spec())
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        delegate!(self, e => e.reset(seed))
    }
    fn step(&mut self, action: &Action) -> Result<Step> {
        delegate!(self, e => e.step(action))
    }
    fn observation(&self) -> Vec<f64> {
        delegate!(self, e => e.observation())
    }
    fn is_done(&self) -> bool {
        delegate!(self, e => e.is_done())
    }
    fn snapshot(&self) -> EnvState {
        delegate!(self, e => e.snapshot())
    }
    fn restore(&mut self, state: &EnvState) -> Result<()> {
        delegate!(self, e => e.restore(state))
    }
    fn is_deterministic(&self) -> bool {
        delegate!(self, e => e.is_deterministic())
    }
    fn state_key(&self) -> Option<u64> {
        delegate!(self, e => e.state_key())
    }
}

/// FNV-1a over the JSON form of a config; stable across runs and platforms.
pub(crate) fn fingerprint<T: Serialize>(kind: &str, config: &T) -> u64 {
    let json = serde_json::to_string(config).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in kind.bytes().chain(json.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn hash_state<T: Hash>(value: &T) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

pub(crate) fn discrete_action(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(Error::ActionOutOfRange { index: *a, count: n }),
        Action::Continuous(_) => Err(Error::InvalidAction(
            "continuous action given to a discrete environment".into(),
        )),
    }
}

fn foreign(expected: &str) -> Error {
    Error::ForeignSnapshot(format!("expected a {expected} snapshot with matching configuration"))
}

fn check_fingerprint(state: &EnvState, fingerprint: u64, kind: &str) -> Result<()> {
    if state.fingerprint != fingerprint {
        return Err(foreign(kind));
    }
    Ok(())
}
