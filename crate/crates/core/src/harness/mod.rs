//! Experiment orchestration: training runs, evaluation reports and plot data.
//!
//! A run directory holds:
//!
//! | file              | contents                                                    |
//! |-------------------|-------------------------------------------------------------|
//! | `config.toml`     | the resolved experiment configuration                       |
//! | `metrics.csv`     | one row per metrics interval; first line is a timestamp     |
//! | `standard.ckpt`   | checkpoint at the end of the standard phase (if both ran)   |
//! | `checkpoint.ckpt` | final checkpoint                                            |
//! | `summary.json`    | deterministic end-of-run summary                            |
//! | `timing.json`     | wall-clock durations (kept apart so other files reproduce)  |
//! | `report.json`     | evaluation report, written by [`evaluate`]                  |
//! | `episodes.csv`    | per-episode rewards for every ε of the sweep                |
//! | `worst_case.csv`  | per-seed GWC/AWC rewards                                    |

pub mod checkpoint;
pub mod config;
pub mod presets;
pub mod trainer;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::agents::sample_action;
use crate::attacks::{fit_dynamics, AttackConfig, AttackKind, DynamicsFitConfig, DynamicsModel, DynamicsSample};
use crate::env::{Action, EnvConfig, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::eval::{
    acr, awc, gwc, nominal_reward, par_episodes, q_value_bias, reward_under_attack, AttackRow,
    EvalReport, WorstCaseRow,
};
use crate::nn::{HeadKind, Network};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub use checkpoint::Checkpoint;
pub use config::{EvaluationConfig, ExperimentConfig};
pub use trainer::{MetricRow, Phase, Trainer};

/// Environment variable naming the directory that run directories live under.
pub const OUTPUT_ROOT_VAR: &str = "RADIAL_OUTPUT_ROOT";

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const STANDARD_CHECKPOINT: &str = "standard.ckpt";
pub const REPORT_FILE: &str = "report.json";

const METRIC_COLUMNS: [&str; 9] = [
    "step",
    "phase",
    "epsilon",
    "loss_total",
    "loss_nominal",
    "loss_adversarial",
    "train_return",
    "eval_reward",
    "probe_overlap",
];

/// `$RADIAL_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Where a configuration's run is written: its `output_dir` (relative to the
/// output root unless absolute) or `<root>/<name>`.
pub fn run_dir(config: &ExperimentConfig) -> PathBuf {
    let root = output_root();
    match &config.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => root.join(d),
        None => root.join(&config.name),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub agent: String,
    pub environment: String,
    pub seed: u64,
    pub steps: u64,
    pub standard_steps: u64,
    pub robust_steps: u64,
    pub final_epsilon: f64,
    pub final_eval_reward: Option<f64>,
    /// DQN overlap loss at the final ε on a fixed batch, when the robust phase began and at the end.
    pub probe_overlap_start: Option<f64>,
    pub probe_overlap_end: Option<f64>,
    pub metric_rows: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub summary: TrainSummary,
    pub rows: Vec<MetricRow>,
}

/// Trains `config` from scratch into `dir`.
pub fn train(
    config: &ExperimentConfig,
    dir: &Path,
    on_row: impl FnMut(&MetricRow),
) -> Result<TrainOutcome> {
    drive(Trainer::new(config.clone())?, dir, on_row)
}

/// Continues a run from a checkpoint into `dir`.
pub fn resume(ck: &Checkpoint, dir: &Path, on_row: impl FnMut(&MetricRow)) -> Result<TrainOutcome> {
    drive(Trainer::from_checkpoint(ck)?, dir, on_row)
}

fn drive(mut t: Trainer, dir: &Path, mut on_row: impl FnMut(&MetricRow)) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), t.config().to_toml_string()?)?;
    let started = Instant::now();
    let standard = t.config().phases.standard();
    let robust = t.config().phases.robust_steps;
    if standard > 0 && robust > 0 && t.step() < standard {
        t.run_until(standard, &mut on_row)?;
        t.checkpoint()?.save(&dir.join(STANDARD_CHECKPOINT))?;
    }
    let standard_secs = started.elapsed().as_secs_f64();
    t.run(&mut on_row)?;
    let total_secs = started.elapsed().as_secs_f64();

    let ck = t.checkpoint()?;
    ck.save(&dir.join(FINAL_CHECKPOINT))?;
    write_metrics(&dir.join(METRICS_FILE), t.rows())?;
    let cfg = t.config();
    let summary = TrainSummary {
        name: cfg.name.clone(),
        agent: cfg.agent.name().into(),
        environment: cfg.environment.name().into(),
        seed: cfg.seed,
        steps: t.step(),
        standard_steps: standard,
        robust_steps: robust,
        final_epsilon: t.epsilon_at(t.step().saturating_sub(1)),
        final_eval_reward: t.rows().last().and_then(|r| r.eval_reward),
        probe_overlap_start: t.probe_start(),
        probe_overlap_end: t.probe_value()?,
        metric_rows: t.rows().len(),
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let timing = serde_json::json!({
        "train_seconds": total_secs,
        "standard_phase_seconds": standard_secs,
    });
    std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(TrainOutcome {
        dir: dir.to_path_buf(),
        checkpoint: ck,
        summary,
        rows: t.rows().to_vec(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders metric rows as CSV. Everything after the first line is a pure
/// function of the rows.
pub fn metrics_csv(rows: &[MetricRow], generated_unix: u64) -> String {
    let mut s = format!("# generated_unix={generated_unix}\n{}\n", METRIC_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.phase.as_str(),
            r.epsilon,
            opt(r.loss_total),
            opt(r.loss_nominal),
            opt(r.loss_adversarial),
            opt(r.train_return),
            opt(r.eval_reward),
            opt(r.probe_overlap),
        );
    }
    s
}

fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    std::fs::write(path, metrics_csv(rows, now))?;
    Ok(())
}

/// The agent network stored in a checkpoint.
pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<Network> {
    let mut net = Network::new(&ck.config.network_spec()?, &mut seeded(0, 0))?;
    let params: Vec<Tensor> = ck.arrays_with_prefix("net.").into_iter().cloned().collect();
    net.set_parameters(&params)?;
    Ok(net)
}

/// Errors unless `env` can drive `net` (same observation size and action space).
pub fn check_compatible(net: &Network, spec: &EnvSpec) -> Result<()> {
    let head_ok = match net.head_kind() {
        HeadKind::DuelingQ | HeadKind::Softmax => spec.action_space.is_discrete(),
        HeadKind::Gaussian => !spec.action_space.is_discrete(),
        HeadKind::Linear => true,
    };
    if net.input_dim() != spec.observation_dim
        || !head_ok
        || net.num_outputs() != spec.action_space.size()
    {
        return Err(Error::Unsupported(format!(
            "checkpoint network ({} inputs, {} outputs) does not match the environment \
             ({} observations, {:?})",
            net.input_dim(),
            net.num_outputs(),
            spec.observation_dim,
            spec.action_space
        )));
    }
    Ok(())
}

/// Transitions from stochastic policy rollouts, for fitting a dynamics model.
pub fn collect_dynamics_samples(
    net: &Network,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<DynamicsSample>> {
    let mut rng = seeded(seed, 12);
    let mut e = env.build()?;
    let mut out = Vec::new();
    for i in 0..episodes as u64 {
        let mut obs = e.reset(seed.wrapping_add(i) | (1 << 62));
        while !e.is_done() {
            let head = net.forward(&Tensor::vector(obs.clone())?)?;
            let (action, _) = sample_action(&head, &mut rng)?;
            let Action::Continuous(a) = &action else {
                return Err(Error::Unsupported(
                    "dynamics models are fitted for continuous actions".into(),
                ));
            };
            let step = e.step(&action)?;
            out.push(DynamicsSample {
                obs: obs.clone(),
                action: a.clone(),
                next_obs: step.observation.clone(),
            });
            obs = step.observation;
        }
    }
    Ok(out)
}

/// Wall-clock of one evaluation, stored next to (not inside) the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub seconds: f64,
}

/// Evaluates the checkpoint's agent. `env` overrides the checkpoint's
/// environment and must be compatible with its network. When `dir` is
/// given, the report and per-episode tables are written there.
pub fn evaluate(
    ck: &Checkpoint,
    eval: &EvaluationConfig,
    env: Option<&EnvConfig>,
    dir: Option<&Path>,
) -> Result<(EvalReport, EvalTiming)> {
    let started = Instant::now();
    let net = network_from_checkpoint(ck)?;
    let env_cfg = env.unwrap_or(&ck.config.environment).clone();
    let probe_env = env_cfg.build()?;
    let spec = probe_env.spec().clone();
    check_compatible(&net, &spec)?;
    let discrete = spec.action_space.is_discrete();
    let seeds = eval.seeds();
    let train_eps = ck.config.schedule.eps_max();
    let kind = eval.attack.unwrap_or(if discrete { AttackKind::Pgd } else { AttackKind::Mad });

    let dynamics: Option<DynamicsModel> = match kind {
        AttackKind::Compounding { .. } => {
            let samples = collect_dynamics_samples(&net, &env_cfg, 20, ck.config.seed)?;
            let fit = DynamicsFitConfig {
                seed: ck.config.seed,
                ..DynamicsFitConfig::default()
            };
            Some(fit_dynamics(&samples, &fit)?.0)
        }
        _ => None,
    };

    let nominal = nominal_reward(&net, &env_cfg, &seeds)?;
    let mut attacks = Vec::new();
    for (i, &m) in eval.epsilon_multipliers.iter().enumerate() {
        let cfg = AttackConfig {
            kind,
            epsilon: m * train_eps,
            steps: eval.attack_steps,
            step_size: None,
            seed: ck.config.seed.wrapping_add(i as u64),
        };
        let stats = reward_under_attack(&net, &env_cfg, &cfg, &seeds, dynamics.as_ref())?;
        attacks.push(AttackRow { attack: cfg, stats });
    }

    let gwc_row = if discrete && eval.gwc {
        let r = par_episodes(&env_cfg, &seeds, |e, s| Ok(gwc(&net, e, train_eps, s)?.reward))?;
        Some(WorstCaseRow {
            epsilon: train_eps,
            rewards: r,
        })
    } else {
        None
    };
    let awc_rows = if discrete && eval.awc {
        Some(par_episodes(&env_cfg, &seeds, |e, s| {
            awc(&net, e, train_eps, s, eval.awc_budget)
        })?)
    } else {
        None
    };
    let acr_value = if discrete && eval.acr {
        Some(acr(&net, &env_cfg, train_eps, &seeds)?)
    } else {
        None
    };
    let q_bias = if eval.q_bias && net.head_kind() == HeadKind::DuelingQ {
        let gamma = spec.discount;
        Some(par_episodes(&env_cfg, &seeds, |e, s| q_value_bias(&net, e, gamma, s))?)
    } else {
        None
    };

    let report = EvalReport {
        episodes: seeds.len(),
        seeds,
        nominal,
        attacks,
        gwc: gwc_row,
        awc: awc_rows,
        acr: acr_value,
        q_bias,
    };
    let timing = EvalTiming {
        seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = dir {
        write_report(dir, &report, &timing)?;
    }
    Ok((report, timing))
}

/// Per-episode rewards of the ε sweep: one row per (ε, seed).
pub fn episodes_csv(report: &EvalReport) -> String {
    let mut s = String::from("attack,epsilon,seed,reward\n");
    for row in &report.attacks {
        let name = match row.attack.kind {
            AttackKind::Pgd => "pgd",
            AttackKind::Mad => "mad",
            AttackKind::Compounding { .. } => "compounding",
        };
        for (seed, r) in report.seeds.iter().zip(&row.stats.rewards) {
            let _ = writeln!(s, "{name},{},{seed},{r}", row.attack.epsilon);
        }
    }
    s
}

fn worst_case_csv(report: &EvalReport) -> String {
    let mut s = String::from("seed,epsilon,gwc,awc,awc_exact\n");
    for (i, seed) in report.seeds.iter().enumerate() {
        let eps = report.gwc.as_ref().map(|g| g.epsilon);
        let g = report.gwc.as_ref().map(|g| g.rewards[i]);
        let (a, exact) = match report.awc.as_ref().map(|a| a[i]) {
            Some(crate::eval::AwcOutcome::Exact { reward, .. }) => (Some(reward), "true"),
            Some(crate::eval::AwcOutcome::BudgetExhausted { upper_bound, .. }) => {
                (upper_bound, "false")
            }
            None => (None, ""),
        };
        let _ = writeln!(s, "{seed},{},{},{},{exact}", opt(eps), opt(g), opt(a));
    }
    s
}

fn write_report(dir: &Path, report: &EvalReport, timing: &EvalTiming) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("episodes.csv"), episodes_csv(report))?;
    if report.gwc.is_some() || report.awc.is_some() {
        std::fs::write(dir.join("worst_case.csv"), worst_case_csv(report))?;
    }
    std::fs::write(
        dir.join("eval_timing.json"),
        serde_json::to_string_pretty(timing)?,
    )?;
    Ok(())
}

/// Parses a `metrics.csv` written by training back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingMetrics(path.display().to_string()))?;
    let bad = |line: usize, what: &str| {
        Error::MissingMetrics(format!("{}:{}: {what}", path.display(), line + 1))
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == METRIC_COLUMNS.join(",") => {}
        Some((i, _)) => return Err(bad(i, "unexpected header")),
        None => return Err(bad(0, "no header")),
    }
    let num = |i: usize, s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(i, "bad number"))
        }
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRIC_COLUMNS.len() {
            return Err(bad(i, "wrong column count"));
        }
        rows.push(MetricRow {
            step: f[0].parse().map_err(|_| bad(i, "bad step"))?,
            phase: match f[1] {
                "standard" => Phase::Standard,
                "robust" => Phase::Robust,
                _ => return Err(bad(i, "bad phase")),
            },
            epsilon: num(i, f[2])?.ok_or_else(|| bad(i, "missing epsilon"))?,
            loss_total: num(i, f[3])?,
            loss_nominal: num(i, f[4])?,
            loss_adversarial: num(i, f[5])?,
            train_return: num(i, f[6])?,
            eval_reward: num(i, f[7])?,
            probe_overlap: num(i, f[8])?,
        });
    }
    Ok(rows)
}

/// Tidy `(x, y, series)` tables for plotting, as `(file name, contents)`.
pub fn plot_tables(dir: &Path) -> Result<Vec<(String, String)>> {
    let metrics = dir.join(METRICS_FILE);
    if !metrics.is_file() {
        return Err(Error::MissingMetrics(format!(
            "no {METRICS_FILE} in {}",
            dir.display()
        )));
    }
    let rows = read_metrics(&metrics)?;
    if rows.is_empty() {
        return Err(Error::MissingMetrics(format!("{} has no rows", metrics.display())));
    }
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let mut tables = Vec::new();

    let mut curves = String::from("x,y,series\n");
    let series: [(&str, fn(&MetricRow) -> Option<f64>); 7] = [
        ("epsilon", |r| Some(r.epsilon)),
        ("loss_total", |r| r.loss_total),
        ("loss_nominal", |r| r.loss_nominal),
        ("loss_adversarial", |r| r.loss_adversarial),
        ("train_return", |r| r.train_return),
        ("eval_reward", |r| r.eval_reward),
        ("probe_overlap", |r| r.probe_overlap),
    ];
    for (name, get) in series {
        for r in &rows {
            if let Some(y) = get(r) {
                let _ = writeln!(curves, "{},{y},{name}", r.step);
            }
        }
    }
    tables.push(("training_curves.csv".to_string(), curves));

    let sched = &config.schedule;
    let end = sched.ramp_steps().max(config.phases.robust_steps).max(1);
    let points = 200u64.min(end);
    let mut eps = String::from("x,y,series\n");
    for i in 0..=points {
        let x = end * i / points;
        let _ = writeln!(eps, "{x},{},epsilon", sched.at(x));
    }
    tables.push(("epsilon_schedule.csv".to_string(), eps));

    let report_path = dir.join(REPORT_FILE);
    if report_path.is_file() {
        let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
        if let Some(bias) = &report.q_bias {
            let mut s = String::from("x,y,series\n");
            for (seed, series) in report.seeds.iter().zip(bias) {
                for (t, b) in series.iter().enumerate() {
                    let _ = writeln!(s, "{t},{b},seed_{seed}");
                }
            }
            tables.push(("q_bias.csv".to_string(), s));
        }
    }
    Ok(tables)
}

/// Writes [`plot_tables`] into `<dir>/plots`. Nothing is written on error.
pub fn export_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = plot_tables(dir)?;
    let out = dir.join("plots");
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for (name, body) in tables {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}
