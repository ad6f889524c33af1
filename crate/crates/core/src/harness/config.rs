//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "gridchase-dqn-radial"
//! seed = 0
//!
//! [environment]
//! kind = "grid_chase"
//! size = 5
//!
//! [agent]
//! kind = "dqn"
//! hidden = [64, 64]
//!
//! [phases]
//! standard_steps = 20000
//! robust_steps = 20000
//!
//! [radial]
//! kappa = 0.8
//! margin = 0.5
//! approach = "two"
//!
//! [schedule]
//! kind = "smoothed_linear"
//! ramp_steps = 15000
//! eps_max = 0.2
//! ```
//!
//! Unknown keys are rejected so that typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::env::{EnvConfig, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::nn::{HeadKind, NetworkSpec};
use crate::optim::Adam;
use crate::radial::{Algorithm, RadialConfig};
use crate::schedule::{EpsilonSchedule, ExplorationSchedule};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the output root.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub environment: EnvConfig,
    pub agent: AgentConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub phases: PhaseConfig,
    #[serde(default)]
    pub radial: RadialConfig,
    pub schedule: EpsilonSchedule,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentConfig {
    Dqn(DqnConfig),
    A2c(A2cConfig),
    PpoDiscrete(PpoConfig),
    PpoContinuous(PpoConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_buffer")]
    pub buffer_capacity: usize,
    #[serde(default = "default_learning_starts")]
    pub learning_starts: u64,
    #[serde(default = "one")]
    pub train_every: u64,
    #[serde(default = "default_target_update")]
    pub target_update: u64,
    #[serde(default = "yes")]
    pub double: bool,
    #[serde(default = "default_exploration")]
    pub exploration: ExplorationSchedule,
    /// Exploration rate during the robust phase.
    #[serde(default = "default_robust_exploration")]
    pub robust_exploration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct A2cConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_a2c_rollout")]
    pub rollout_len: usize,
    #[serde(default = "default_a2c_rollout")]
    pub n_step: usize,
    #[serde(default = "default_entropy_beta")]
    pub entropy_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_ppo_rollout")]
    pub rollout_len: usize,
    #[serde(default = "default_ppo_rollout")]
    pub n_step: usize,
    #[serde(default = "default_ppo_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub minibatch: usize,
    #[serde(default = "default_clip")]
    pub clip_ratio: f64,
    #[serde(default = "default_value_coef")]
    pub value_coef: f64,
    #[serde(default)]
    pub entropy_coef: f64,
    #[serde(default = "yes")]
    pub normalize_advantages: bool,
    #[serde(default = "default_log_std")]
    pub initial_log_std: f64,
}

fn default_batch() -> usize {
    64
}
fn default_buffer() -> usize {
    20_000
}
fn default_learning_starts() -> u64 {
    500
}
fn one() -> u64 {
    1
}
fn default_target_update() -> u64 {
    500
}
fn yes() -> bool {
    true
}
fn default_exploration() -> ExplorationSchedule {
    ExplorationSchedule {
        start: 1.0,
        end: 0.05,
        decay_steps: 5_000,
    }
}
fn default_robust_exploration() -> f64 {
    0.05
}
fn default_a2c_rollout() -> usize {
    16
}
fn default_entropy_beta() -> f64 {
    0.01
}
fn default_ppo_rollout() -> usize {
    256
}
fn default_ppo_epochs() -> usize {
    4
}
fn default_clip() -> f64 {
    0.2
}
fn default_value_coef() -> f64 {
    0.5
}
fn default_log_std() -> f64 {
    -0.5
}

impl AgentConfig {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            AgentConfig::Dqn(_) => Algorithm::Dqn,
            AgentConfig::A2c(_) => Algorithm::A3c,
            AgentConfig::PpoDiscrete(_) | AgentConfig::PpoContinuous(_) => Algorithm::Ppo,
        }
    }

    pub fn hidden(&self) -> &[usize] {
        match self {
            AgentConfig::Dqn(c) => &c.hidden,
            AgentConfig::A2c(c) => &c.hidden,
            AgentConfig::PpoDiscrete(c) | AgentConfig::PpoContinuous(c) => &c.hidden,
        }
    }

    pub fn discrete(&self) -> bool {
        !matches!(self, AgentConfig::PpoContinuous(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentConfig::Dqn(_) => "dqn",
            AgentConfig::A2c(_) => "a2c",
            AgentConfig::PpoDiscrete(_) => "ppo_discrete",
            AgentConfig::PpoContinuous(_) => "ppo_continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: beta1(),
            beta2: beta2(),
            max_grad_norm: Some(10.0),
        }
    }
}

impl OptimizerConfig {
    pub fn build(&self) -> Adam {
        let mut adam = Adam::new(self.learning_rate).with_max_grad_norm(self.max_grad_norm);
        adam.beta1 = self.beta1;
        adam.beta2 = self.beta2;
        adam
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub standard_steps: u64,
    pub robust_steps: u64,
    /// Skip the standard phase and train robustly from initialisation.
    #[serde(default)]
    pub from_scratch: bool,
    /// Learning rate for the robust phase (defaults to the optimizer's).
    #[serde(default)]
    pub robust_learning_rate: Option<f64>,
}

impl PhaseConfig {
    pub fn standard(&self) -> u64 {
        if self.from_scratch {
            0
        } else {
            self.standard_steps
        }
    }

    pub fn total(&self) -> u64 {
        self.standard() + self.robust_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default = "default_eval_seed")]
    pub seed_base: u64,
    /// Attack radii as multiples of the training ε.
    #[serde(default = "default_multipliers")]
    pub epsilon_multipliers: Vec<f64>,
    /// Attack used for the ε sweep; PGD for discrete agents, MAD for continuous ones when unset.
    #[serde(default)]
    pub attack: Option<AttackKind>,
    #[serde(default = "default_attack_steps")]
    pub attack_steps: usize,
    #[serde(default = "yes")]
    pub gwc: bool,
    #[serde(default = "yes")]
    pub acr: bool,
    #[serde(default)]
    pub awc: bool,
    #[serde(default = "default_awc_budget")]
    pub awc_budget: u64,
    #[serde(default = "yes")]
    pub q_bias: bool,
}

fn default_eval_episodes() -> usize {
    20
}
fn default_eval_seed() -> u64 {
    1_000_000
}
fn default_multipliers() -> Vec<f64> {
    vec![0.0, 1.0, 3.0, 5.0]
}
fn default_attack_steps() -> usize {
    10
}
fn default_awc_budget() -> u64 {
    crate::eval::DEFAULT_AWC_BUDGET
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: default_eval_episodes(),
            seed_base: default_eval_seed(),
            epsilon_multipliers: default_multipliers(),
            attack: None,
            attack_steps: default_attack_steps(),
            gwc: true,
            acr: true,
            awc: false,
            awc_budget: default_awc_budget(),
            q_bias: true,
        }
    }
}

impl EvaluationConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64).map(|i| self.seed_base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Emit a metrics row every this many environment steps.
    #[serde(default = "default_metrics_every")]
    pub every: u64,
    /// Greedy evaluation episodes per metrics row (0 disables).
    #[serde(default = "default_metric_episodes")]
    pub eval_episodes: usize,
}

fn default_metrics_every() -> u64 {
    1_000
}
fn default_metric_episodes() -> usize {
    5
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            every: default_metrics_every(),
            eval_episodes: default_metric_episodes(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        Ok(self.environment.build()?.spec().clone())
    }

    /// Checks every component, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        let spec = self.env_spec()?;
        let discrete_env = spec.action_space.is_discrete();
        if self.agent.discrete() != discrete_env {
            return Err(Error::config(
                "agent.kind",
                format!(
                    "{} agents need a {} action space",
                    self.agent.name(),
                    if self.agent.discrete() { "discrete" } else { "continuous" }
                ),
            ));
        }
        if self.agent.hidden().is_empty() || self.agent.hidden().contains(&0) {
            return Err(Error::config("agent.hidden", "need at least one positive width"));
        }
        match &self.agent {
            AgentConfig::Dqn(c) => {
                if c.batch_size == 0 || c.buffer_capacity < c.batch_size {
                    return Err(Error::config("agent.batch_size", "need 0 < batch <= buffer"));
                }
                if c.train_every == 0 || c.target_update == 0 {
                    return Err(Error::config("agent.train_every", "intervals must be positive"));
                }
                if !(0.0..=1.0).contains(&c.robust_exploration) {
                    return Err(Error::config("agent.robust_exploration", "must lie in [0, 1]"));
                }
            }
            AgentConfig::A2c(c) => {
                if c.rollout_len == 0 || c.n_step == 0 {
                    return Err(Error::config("agent.rollout_len", "must be positive"));
                }
            }
            AgentConfig::PpoDiscrete(c) | AgentConfig::PpoContinuous(c) => {
                if c.rollout_len == 0 || c.n_step == 0 || c.epochs == 0 || c.minibatch == 0 {
                    return Err(Error::config(
                        "agent.rollout_len",
                        "rollout, n_step, epochs and minibatch must be positive",
                    ));
                }
                if !(c.clip_ratio > 0.0 && c.clip_ratio < 1.0) {
                    return Err(Error::config("agent.clip_ratio", "must lie in (0, 1)"));
                }
            }
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::config("optimizer.learning_rate", "must be positive"));
        }
        if let Some(lr) = self.phases.robust_learning_rate {
            if !(lr > 0.0) {
                return Err(Error::config("phases.robust_learning_rate", "must be positive"));
            }
        }
        if self.phases.robust_steps > 0 {
            self.radial.validate(self.agent.algorithm(), discrete_env)?;
        }
        self.schedule.validate()?;
        for a in &self.attacks {
            a.validate()?;
        }
        if self.metrics.every == 0 {
            return Err(Error::config("metrics.every", "must be positive"));
        }
        if self.evaluation.episodes == 0 {
            return Err(Error::config("evaluation.episodes", "must be positive"));
        }
        if self.evaluation.epsilon_multipliers.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::config("evaluation.epsilon_multipliers", "must be >= 0"));
        }
        Ok(())
    }

    /// Architecture of the agent's network for this environment.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let spec = self.env_spec()?;
        let (head, log_std) = match &self.agent {
            AgentConfig::Dqn(_) => (HeadKind::DuelingQ, -0.5),
            AgentConfig::A2c(_) => (HeadKind::Softmax, -0.5),
            AgentConfig::PpoDiscrete(c) => (HeadKind::Softmax, c.initial_log_std),
            AgentConfig::PpoContinuous(c) => (HeadKind::Gaussian, c.initial_log_std),
        };
        Ok(NetworkSpec {
            input_dim: spec.observation_dim,
            hidden: self.agent.hidden().to_vec(),
            head,
            outputs: spec.action_space.size(),
            initial_log_std: log_std,
            head_scale: if head == HeadKind::DuelingQ { 1.0 } else { 0.1 },
        })
    }

    /// The attack used by the evaluation ε sweep.
    pub fn sweep_attack(&self) -> AttackKind {
        self.evaluation.attack.unwrap_or(if self.agent.discrete() {
            AttackKind::Pgd
        } else {
            AttackKind::Mad
        })
    }
}
