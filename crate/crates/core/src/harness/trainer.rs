//! Two-phase training loops: a standard phase (`κ = 1`, `ε = 0`) followed by
//! robust fine-tuning with the scheduled ε and the combined loss.
//!
//! One [`Trainer::iterate`] call is one environment step for DQN and one
//! rollout (plus its updates) for A2C/PPO. Checkpoints are taken between
//! iterations and capture everything needed to continue bit-exactly:
//! parameters, optimiser moments, replay contents, RNG positions and the
//! environment snapshot.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{AgentConfig, ExperimentConfig, PpoConfig};
use crate::agents::{
    act, dqn_targets, nstep_advantages, sample_action, stack_obs, sync_target, ActMode,
    PpoCoefficients, ReplayBuffer, TrajectoryStep, Transition,
};
use crate::env::{Action, AnyEnv, EnvState, Environment};
use crate::error::{Error, Result};
use crate::eval::nominal_reward;
use crate::nn::{HeadValues, Network};
use crate::optim::Adam;
use crate::radial::{
    a3c_training_loss_vars, dqn_adv_approach2, dqn_training_loss_vars, ppo_training_loss_vars,
    LossVars,
};
use crate::rng::{seeded, RngState};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Standard,
    Robust,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Standard => "standard",
            Phase::Robust => "robust",
        }
    }
}

/// One row of the training metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub phase: Phase,
    pub epsilon: f64,
    pub loss_total: Option<f64>,
    pub loss_nominal: Option<f64>,
    pub loss_adversarial: Option<f64>,
    /// Mean return of training episodes finished since the previous row.
    pub train_return: Option<f64>,
    /// Mean greedy return on the fixed evaluation seeds.
    pub eval_reward: Option<f64>,
    /// DQN only: weighted-overlap loss at the final ε on a fixed probe batch.
    pub probe_overlap: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct LastLoss {
    total: Option<f64>,
    nominal: Option<f64>,
    adversarial: Option<f64>,
}

/// Small trainer state that goes into the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    rng: RngState,
    env: EnvState,
    obs: Vec<f64>,
    episodes_started: u64,
    episode_return: f64,
    pending_returns: Vec<f64>,
    updates: u64,
    adam_step: u64,
    adam_lr: f64,
    next_row: u64,
    last: LastLoss,
    rows: Vec<MetricRow>,
    probe: Option<Vec<Transition>>,
    probe_start: Option<f64>,
    replay: Option<ReplayMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReplayMeta {
    capacity: usize,
    next: usize,
    len: usize,
}

pub struct Trainer {
    config: ExperimentConfig,
    net: Network,
    target: Option<Network>,
    adam: Adam,
    rng: ChaCha8Rng,
    env: AnyEnv,
    obs: Vec<f64>,
    episodes_started: u64,
    episode_return: f64,
    pending_returns: Vec<f64>,
    step: u64,
    updates: u64,
    replay: Option<ReplayBuffer>,
    last: LastLoss,
    next_row: u64,
    rows: Vec<MetricRow>,
    probe: Option<Vec<Transition>>,
    probe_start: Option<f64>,
}

/// Reset seed of the `i`-th training episode; disjoint from small evaluation seeds.
fn training_episode_seed(seed: u64, i: u64) -> u64 {
    (1 << 63) | ((seed & 0x7FFF_FFFF) << 32) | (i & 0xFFFF_FFFF)
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = seeded(config.seed, 101);
        let net = Network::new(&config.network_spec()?, &mut init_rng)?;
        let target = matches!(config.agent, AgentConfig::Dqn(_)).then(|| net.clone());
        let replay = match &config.agent {
            AgentConfig::Dqn(c) => Some(ReplayBuffer::new(c.buffer_capacity)?),
            _ => None,
        };
        let mut env = config.environment.build()?;
        let obs = env.reset(training_episode_seed(config.seed, 0));
        Ok(Self {
            adam: config.optimizer.build(),
            rng: seeded(config.seed, 100),
            next_row: config.metrics.every,
            config,
            net,
            target,
            env,
            obs,
            episodes_started: 1,
            episode_return: 0.0,
            pending_returns: Vec::new(),
            step: 0,
            updates: 0,
            replay,
            last: LastLoss::default(),
            rows: Vec::new(),
            probe: None,
            probe_start: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.phases.total()
    }

    /// Phase of the next iteration.
    pub fn phase(&self) -> Phase {
        self.phase_at(self.step)
    }

    fn phase_at(&self, step: u64) -> Phase {
        if step < self.config.phases.standard() {
            Phase::Standard
        } else {
            Phase::Robust
        }
    }

    /// ε used for updates at the current step (0 during the standard phase).
    pub fn epsilon(&self) -> f64 {
        self.epsilon_at(self.step)
    }

    pub fn epsilon_at(&self, step: u64) -> f64 {
        match self.phase_at(step) {
            Phase::Standard => 0.0,
            Phase::Robust => self.config.schedule.at(step - self.config.phases.standard()),
        }
    }

    fn clip_range(&self) -> Option<(f64, f64)> {
        self.env.spec().observation_range
    }

    fn gamma(&self) -> f64 {
        self.env.spec().discount
    }

    /// Advances by one iteration. Returns any metric rows completed by it.
    pub fn iterate(&mut self) -> Result<Vec<MetricRow>> {
        if self.is_finished() {
            return Ok(Vec::new());
        }
        let robust = self.phase() == Phase::Robust;
        self.adam.lr = match self.config.phases.robust_learning_rate {
            Some(lr) if robust => lr,
            _ => self.config.optimizer.learning_rate,
        };
        match self.config.agent.clone() {
            AgentConfig::Dqn(_) => self.dqn_iteration()?,
            AgentConfig::A2c(_) => self.a2c_iteration()?,
            AgentConfig::PpoDiscrete(c) | AgentConfig::PpoContinuous(c) => {
                self.ppo_iteration(&c)?
            }
        }
        let mut out = Vec::new();
        while self.step >= self.next_row {
            let row = self.metric_row()?;
            self.rows.push(row.clone());
            out.push(row);
            self.next_row += self.config.metrics.every;
        }
        Ok(out)
    }

    /// Runs until the configured step budget is exhausted.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricRow)) -> Result<()> {
        while !self.is_finished() {
            for row in self.iterate()? {
                on_row(&row);
            }
        }
        Ok(())
    }

    /// Runs until `step` reaches at least `until` (or training ends).
    pub fn run_until(&mut self, until: u64, mut on_row: impl FnMut(&MetricRow)) -> Result<()> {
        while !self.is_finished() && self.step < until {
            for row in self.iterate()? {
                on_row(&row);
            }
        }
        Ok(())
    }

    fn env_step(&mut self, action: &Action) -> Result<(f64, bool, Vec<f64>)> {
        let s = self.env.step(action)?;
        self.step += 1;
        self.episode_return += s.reward;
        let next = s.observation.clone();
        if s.done {
            self.pending_returns.push(self.episode_return);
            self.episode_return = 0.0;
            self.obs = self
                .env
                .reset(training_episode_seed(self.config.seed, self.episodes_started));
            self.episodes_started += 1;
        } else {
            self.obs = s.observation;
        }
        Ok((s.reward, s.done, next))
    }

    fn apply(&mut self, parts: (f64, f64, Option<f64>), grads: Vec<Option<Tensor>>) -> Result<()> {
        self.adam.step(self.net.parameters_mut(), &grads)?;
        self.updates += 1;
        self.last = LastLoss {
            total: Some(parts.0),
            nominal: Some(parts.1),
            adversarial: parts.2,
        };
        Ok(())
    }

    fn dqn_iteration(&mut self) -> Result<()> {
        let AgentConfig::Dqn(c) = self.config.agent.clone() else {
            unreachable!()
        };
        let explore = match self.phase() {
            Phase::Standard => c.exploration.at(self.step),
            Phase::Robust => c.robust_exploration,
        };
        let eps = self.epsilon();
        let robust = self.phase() == Phase::Robust;
        let obs = self.obs.clone();
        let a = act(&self.net, &obs, ActMode::EpsilonGreedy(explore), &mut self.rng)?;
        let index = a.discrete().expect("DQN acts discretely");
        let (reward, done, next_obs) = self.env_step(&a)?;
        let replay = self.replay.as_mut().expect("DQN has a replay buffer");
        replay.push(Transition {
            obs,
            action: index,
            reward,
            next_obs,
            done,
        });

        if robust && self.probe.is_none() {
            let probe: Vec<Transition> = replay
                .sample(c.batch_size, &mut self.rng)
                .into_iter()
                .cloned()
                .collect();
            self.probe = Some(probe);
            self.probe_start = self.probe_value()?;
        }

        let replay = self.replay.as_ref().expect("DQN has a replay buffer");
        let ready = self.step >= c.learning_starts && replay.len() >= c.batch_size;
        if ready && self.step.is_multiple_of(c.train_every) {
            let batch: Vec<Transition> = replay
                .sample(c.batch_size, &mut self.rng)
                .into_iter()
                .cloned()
                .collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            let target = self.target.as_ref().expect("DQN has a target network");
            let targets = dqn_targets(&refs, target, c.double.then_some(&self.net), self.gamma())?;
            let actions: Vec<usize> = refs.iter().map(|t| t.action).collect();
            let x = stack_obs(refs.iter().map(|t| t.obs.as_slice()))?;
            let radial = robust.then_some(&self.config.radial);
            let range = self.clip_range();
            let net = &self.net;
            let (parts, grads) = loss_parts(net, |tape, vars| {
                dqn_training_loss_vars(tape, net, vars, x, &actions, &targets, eps, range, radial)
            })?;
            self.apply(parts, grads)?;
        }
        if self.step.is_multiple_of(c.target_update) {
            let target = self.target.as_mut().expect("DQN has a target network");
            sync_target(&self.net, target)?;
        }
        Ok(())
    }

    /// Collects `len` on-policy steps and fills in advantages and return targets.
    fn rollout(&mut self, len: usize, n_step: usize) -> Result<Vec<TrajectoryStep>> {
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let obs = self.obs.clone();
            let head = self.net.forward(&Tensor::vector(obs.clone())?)?;
            let value = match &head {
                HeadValues::Policy { value, .. } | HeadValues::Gaussian { value, .. } => {
                    value.data()[0]
                }
                _ => return Err(Error::Unsupported("on-policy agents need a policy head".into())),
            };
            let (action, log_prob) = sample_action(&head, &mut self.rng)?;
            let (reward, done, _) = self.env_step(&action)?;
            steps.push(TrajectoryStep {
                obs,
                action,
                reward,
                done,
                log_prob_old: log_prob,
                value_old: value,
                advantage: 0.0,
                return_target: 0.0,
            });
        }
        let last_done = steps.last().is_none_or(|s| s.done);
        let bootstrap = if last_done {
            0.0
        } else {
            self.net.state_value(&self.obs)?
        };
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.value_old).collect();
        let (adv, ret) = nstep_advantages(&rewards, &dones, &values, bootstrap, self.gamma(), n_step)?;
        for ((s, a), r) in steps.iter_mut().zip(adv).zip(ret) {
            s.advantage = a;
            s.return_target = r;
        }
        Ok(steps)
    }

    fn a2c_iteration(&mut self) -> Result<()> {
        let AgentConfig::A2c(c) = self.config.agent.clone() else {
            unreachable!()
        };
        let eps = self.epsilon();
        let robust = self.phase() == Phase::Robust;
        let steps = self.rollout(c.rollout_len, c.n_step)?;
        let refs: Vec<&TrajectoryStep> = steps.iter().collect();
        let radial = robust.then_some(&self.config.radial);
        let range = self.clip_range();
        let net = &self.net;
        let (parts, grads) = loss_parts(net, |tape, vars| {
            a3c_training_loss_vars(tape, net, vars, &refs, c.entropy_beta, eps, range, radial)
        })?;
        self.apply(parts, grads)
    }

    fn ppo_iteration(&mut self, c: &PpoConfig) -> Result<()> {
        let eps = self.epsilon();
        let robust = self.phase() == Phase::Robust;
        let mut steps = self.rollout(c.rollout_len, c.n_step)?;
        if c.normalize_advantages && steps.len() > 1 {
            let n = steps.len() as f64;
            let mean = steps.iter().map(|s| s.advantage).sum::<f64>() / n;
            let var = steps.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(1e-8);
            for s in &mut steps {
                s.advantage = (s.advantage - mean) / sd;
            }
        }
        let coef = PpoCoefficients {
            clip: c.clip_ratio,
            value: c.value_coef,
            entropy: c.entropy_coef,
        };
        let range = self.clip_range();
        let mut order: Vec<usize> = (0..steps.len()).collect();
        let mut sums = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..c.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut self.rng);
            for chunk in order.chunks(c.minibatch) {
                let refs: Vec<&TrajectoryStep> = chunk.iter().map(|&i| &steps[i]).collect();
                let radial = robust.then_some(&self.config.radial);
                let net = &self.net;
                let (parts, grads) = loss_parts(net, |tape, vars| {
                    ppo_training_loss_vars(tape, net, vars, &refs, &coef, eps, range, radial)
                })?;
                self.adam.step(self.net.parameters_mut(), &grads)?;
                self.updates += 1;
                sums.0 += parts.0;
                sums.1 += parts.1;
                sums.2 += parts.2.unwrap_or(0.0);
                sums.3 += 1;
            }
        }
        let n = sums.3.max(1) as f64;
        self.last = LastLoss {
            total: Some(sums.0 / n),
            nominal: Some(sums.1 / n),
            adversarial: robust.then_some(sums.2 / n),
        };
        Ok(())
    }

    /// Overlap loss at the final ε on the probe batch, once the robust phase has begun.
    pub fn probe_value(&self) -> Result<Option<f64>> {
        let Some(p) = &self.probe else {
            return Ok(None);
        };
        let refs: Vec<&Transition> = p.iter().collect();
        Ok(Some(dqn_adv_approach2(
            &refs,
            &self.net,
            self.config.schedule.eps_max(),
            self.config.radial.margin,
            self.clip_range(),
        )?))
    }

    /// Probe value measured when the probe batch was drawn.
    pub fn probe_start(&self) -> Option<f64> {
        self.probe_start
    }

    fn metric_row(&mut self) -> Result<MetricRow> {
        let train_return = (!self.pending_returns.is_empty()).then(|| {
            self.pending_returns.iter().sum::<f64>() / self.pending_returns.len() as f64
        });
        self.pending_returns.clear();
        let eval_reward = if self.config.metrics.eval_episodes > 0 {
            let seeds: Vec<u64> = self
                .config
                .evaluation
                .seeds()
                .into_iter()
                .take(self.config.metrics.eval_episodes)
                .collect();
            Some(nominal_reward(&self.net, &self.config.environment, &seeds)?.mean)
        } else {
            None
        };
        let probe_overlap = self.probe_value()?;
        // Label the row with the phase and ε of the iteration that just ran.
        let last = self.step.saturating_sub(1);
        Ok(MetricRow {
            step: self.step,
            phase: self.phase_at(last),
            epsilon: self.epsilon_at(last),
            loss_total: self.last.total,
            loss_nominal: self.last.nominal,
            loss_adversarial: self.last.adversarial,
            train_return,
            eval_reward,
            probe_overlap,
        })
    }

    /// Full resumable state.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut arrays = Vec::new();
        for (i, p) in self.net.parameters().into_iter().enumerate() {
            arrays.push((format!("net.{i:03}"), p.clone()));
        }
        if let Some(t) = &self.target {
            for (i, p) in t.parameters().into_iter().enumerate() {
                arrays.push((format!("target.{i:03}"), p.clone()));
            }
        }
        let (m, v) = self.adam.moments();
        for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
            arrays.push((format!("adam.m.{i:03}"), Tensor::vector(mi.clone())?));
            arrays.push((format!("adam.v.{i:03}"), Tensor::vector(vi.clone())?));
        }
        let replay = match &self.replay {
            Some(r) => {
                let items = r.items();
                let d = self.net.input_dim();
                let n = items.len();
                let mut obs = Vec::with_capacity(n * d);
                let mut next = Vec::with_capacity(n * d);
                let mut act = Vec::with_capacity(n);
                let mut rew = Vec::with_capacity(n);
                let mut done = Vec::with_capacity(n);
                for t in items {
                    obs.extend_from_slice(&t.obs);
                    next.extend_from_slice(&t.next_obs);
                    act.push(t.action as f64);
                    rew.push(t.reward);
                    done.push(if t.done { 1.0 } else { 0.0 });
                }
                arrays.push(("replay.obs".into(), Tensor::new(vec![n, d], obs)?));
                arrays.push(("replay.next_obs".into(), Tensor::new(vec![n, d], next)?));
                arrays.push(("replay.action".into(), Tensor::new(vec![n], act)?));
                arrays.push(("replay.reward".into(), Tensor::new(vec![n], rew)?));
                arrays.push(("replay.done".into(), Tensor::new(vec![n], done)?));
                Some(ReplayMeta {
                    capacity: r.capacity(),
                    next: r.next_slot(),
                    len: n,
                })
            }
            None => None,
        };
        let state = TrainerState {
            rng: RngState::capture(&self.rng),
            env: self.env.snapshot(),
            obs: self.obs.clone(),
            episodes_started: self.episodes_started,
            episode_return: self.episode_return,
            pending_returns: self.pending_returns.clone(),
            updates: self.updates,
            adam_step: self.adam.steps_taken(),
            adam_lr: self.adam.lr,
            next_row: self.next_row,
            last: self.last,
            rows: self.rows.clone(),
            probe: self.probe.clone(),
            probe_start: self.probe_start,
            replay,
        };
        Ok(Checkpoint {
            config: self.config.clone(),
            step: self.step,
            state: serde_json::to_value(&state)?,
            arrays,
        })
    }

    /// Restores a trainer from [`checkpoint`](Self::checkpoint) output.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(ck.config.clone())?;
        let state: TrainerState = serde_json::from_value(ck.state.clone())?;
        let params: Vec<Tensor> = ck.arrays_with_prefix("net.").into_iter().cloned().collect();
        t.net.set_parameters(&params)?;
        if let Some(target) = t.target.as_mut() {
            let params: Vec<Tensor> =
                ck.arrays_with_prefix("target.").into_iter().cloned().collect();
            target.set_parameters(&params)?;
        }
        let m: Vec<Vec<f64>> = ck
            .arrays_with_prefix("adam.m.")
            .into_iter()
            .map(|x| x.data().to_vec())
            .collect();
        let v: Vec<Vec<f64>> = ck
            .arrays_with_prefix("adam.v.")
            .into_iter()
            .map(|x| x.data().to_vec())
            .collect();
        t.adam.restore_state(state.adam_step, m, v)?;
        t.adam.lr = state.adam_lr;
        if let Some(meta) = &state.replay {
            let obs = ck.array("replay.obs")?;
            let next = ck.array("replay.next_obs")?;
            let act = ck.array("replay.action")?;
            let rew = ck.array("replay.reward")?;
            let done = ck.array("replay.done")?;
            let items = (0..meta.len)
                .map(|i| Transition {
                    obs: obs.row(i).to_vec(),
                    action: act.data()[i] as usize,
                    reward: rew.data()[i],
                    next_obs: next.row(i).to_vec(),
                    done: done.data()[i] != 0.0,
                })
                .collect();
            t.replay = Some(ReplayBuffer::from_parts(meta.capacity, items, meta.next)?);
        }
        t.env.restore(&state.env)?;
        t.rng = state.rng.restore();
        t.obs = state.obs;
        t.episodes_started = state.episodes_started;
        t.episode_return = state.episode_return;
        t.pending_returns = state.pending_returns;
        t.updates = state.updates;
        t.next_row = state.next_row;
        t.last = state.last;
        t.rows = state.rows;
        t.probe = state.probe;
        t.probe_start = state.probe_start;
        t.step = ck.step;
        Ok(t)
    }
}

/// Builds a [`LossVars`] on a fresh tape with trainable parameters and
/// returns `((total, nominal, adversarial), gradients)`.
fn loss_parts(
    net: &Network,
    build: impl FnOnce(&mut Tape, &crate::nn::NetVars) -> Result<LossVars>,
) -> Result<((f64, f64, Option<f64>), Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, true);
    let parts = build(&mut tape, &vars)?;
    let total = tape.value(parts.total).item();
    let nominal = tape.value(parts.nominal).item();
    let adversarial = parts.adversarial.map(|a| tape.value(a).item());
    let grads = tape.backward(parts.total)?;
    Ok((
        (total, nominal, adversarial),
        vars.params().iter().map(|&p| grads.get(p).cloned()).collect(),
    ))
}
