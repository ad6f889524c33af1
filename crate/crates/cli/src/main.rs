use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use radial_core::attacks::{AttackConfig, AttackKind};
use radial_core::bounds::sampled_containment;
use radial_core::env::{EnvConfig, Environment};
use radial_core::eval::{awc, gwc, nominal_reward, par_episodes, reward_under_attack, AwcOutcome};
use radial_core::harness::{
    self, collect_dynamics_samples, network_from_checkpoint, presets, Checkpoint,
    ExperimentConfig, MetricRow,
};
use radial_core::radial::Approach;
use radial_core::rng::seeded;
use radial_core::tensor::Tensor;

#[derive(Parser)]
#[command(name = "radial", version, about = "Adversarially robust RL training and certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent (standard phase, then robust fine-tuning).
    Train(TrainArgs),
    /// Evaluate a checkpoint: nominal reward, attack sweep, GWC, AWC, ACR, Q-bias.
    Evaluate(EvaluateArgs),
    /// Reward under a single attack.
    Attack(AttackArgs),
    /// Greedy worst-case reward per episode.
    Gwc(WorstCaseArgs),
    /// Exact worst-case reward per episode by exhaustive search.
    Awc(AwcArgs),
    /// Monte-Carlo check that sampled perturbations stay inside the bounds.
    VerifyBounds(VerifyArgs),
    /// Write tidy plotting tables for a run directory.
    ExportPlots {
        run_dir: PathBuf,
    },
    /// List the built-in presets, or print one.
    Presets {
        name: Option<String>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with_all = ["preset", "resume"])]
    config: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long, conflicts_with = "resume")]
    preset: Option<String>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run directory (defaults to `$RADIAL_OUTPUT_ROOT/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    standard_steps: Option<u64>,
    #[arg(long)]
    robust_steps: Option<u64>,
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    eps_max: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long, value_enum)]
    approach: Option<ApproachArg>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Suppress per-row progress output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApproachArg {
    One,
    Two,
    TwoSymmetric,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Pgd,
    Mad,
    Compounding,
}

impl AttackArg {
    fn kind(self, horizon: usize) -> AttackKind {
        match self {
            AttackArg::Pgd => AttackKind::Pgd,
            AttackArg::Mad => AttackKind::Mad,
            AttackArg::Compounding => AttackKind::Compounding { horizon },
        }
    }
}

#[derive(Args)]
struct Source {
    /// Checkpoint file, or a run directory containing `checkpoint.ckpt`.
    checkpoint: PathBuf,
    /// Environment configuration (TOML) replacing the checkpoint's.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed_base: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: Source,
    /// Output directory (defaults to the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Attack radii as multiples of the training ε, comma separated.
    #[arg(long, value_delimiter = ',')]
    multipliers: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long)]
    attack_steps: Option<usize>,
    /// Also run the exact worst-case search.
    #[arg(long)]
    awc: bool,
    #[arg(long)]
    awc_budget: Option<u64>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "pgd")]
    kind: AttackArg,
    /// Attack radius (defaults to the training ε).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct WorstCaseArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct AwcArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = radial_core::eval::DEFAULT_AWC_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: Source,
    /// Radii to check, comma separated (defaults to the training ε).
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Sampled perturbations per observation.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => train(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Attack(a) => attack(a)?,
        Command::Gwc(a) => worst_case_gwc(a)?,
        Command::Awc(a) => worst_case_awc(a)?,
        Command::VerifyBounds(a) => return verify(a),
        Command::ExportPlots { run_dir } => {
            for p in harness::export_plots(&run_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Presets { name: None } => {
            for n in presets::names() {
                println!("{n}");
            }
        }
        Command::Presets { name: Some(n) } => match presets::source(&n) {
            Some(s) => print!("{s}"),
            None => bail!("unknown preset `{n}`"),
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Result<()> {
    if let Some(n) = &a.name {
        cfg.name = n.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.standard_steps {
        cfg.phases.standard_steps = s;
    }
    if let Some(s) = a.robust_steps {
        cfg.phases.robust_steps = s;
    }
    if a.from_scratch {
        cfg.phases.from_scratch = true;
    }
    if let Some(e) = a.eps_max {
        use radial_core::schedule::EpsilonSchedule as S;
        match &mut cfg.schedule {
            S::SmoothedLinear { eps_max, .. } | S::ExpThenLinear { eps_max, .. } => *eps_max = e,
            S::Constant { eps } => *eps = e,
        }
    }
    if let Some(k) = a.kappa {
        cfg.radial.kappa = k;
    }
    if let Some(m) = a.margin {
        cfg.radial.margin = m;
    }
    if let Some(ap) = a.approach {
        cfg.radial.approach = match ap {
            ApproachArg::One => Approach::One,
            ApproachArg::Two => Approach::Two,
            ApproachArg::TwoSymmetric => Approach::TwoSymmetric,
        };
    }
    if let Some(lr) = a.learning_rate {
        cfg.optimizer.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(())
}

fn print_row(r: &MetricRow) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "step {:>8} {:<8} eps {:.4} loss {} (nom {}, adv {}) train {} eval {}",
        r.step,
        r.phase.as_str(),
        r.epsilon,
        f(r.loss_total),
        f(r.loss_nominal),
        f(r.loss_adversarial),
        f(r.train_return),
        f(r.eval_reward),
    );
}

fn train(a: TrainArgs) -> Result<()> {
    let quiet = a.quiet;
    let on_row = |r: &MetricRow| {
        if !quiet {
            print_row(r)
        }
    };
    let outcome = if let Some(path) = &a.resume {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let dir = a
            .out
            .clone()
            .or_else(|| path.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| harness::run_dir(&ck.config));
        harness::resume(&ck, &dir, on_row)?
    } else {
        let mut cfg = match (&a.config, &a.preset) {
            (Some(p), _) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            (None, Some(n)) => presets::get(n)?,
            (None, None) => bail!("pass --config, --preset or --resume"),
        };
        apply_overrides(&mut cfg, &a)?;
        let dir = a.out.clone().unwrap_or_else(|| harness::run_dir(&cfg));
        harness::train(&cfg, &dir, on_row)?
    };
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    println!("wrote {}", outcome.dir.display());
    Ok(())
}

struct Loaded {
    ck: Checkpoint,
    dir: PathBuf,
    env: Option<EnvConfig>,
    eval: harness::EvaluationConfig,
}

impl Loaded {
    fn env(&self) -> &EnvConfig {
        self.env.as_ref().unwrap_or(&self.ck.config.environment)
    }

    fn train_eps(&self) -> f64 {
        self.ck.config.schedule.eps_max()
    }
}

fn load(s: &Source) -> Result<Loaded> {
    let path = if s.checkpoint.is_dir() {
        s.checkpoint.join(harness::FINAL_CHECKPOINT)
    } else {
        s.checkpoint.clone()
    };
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let env = match &s.env {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Some(toml::from_str::<EnvConfig>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let mut eval = ck.config.evaluation.clone();
    if let Some(n) = s.episodes {
        eval.episodes = n;
    }
    if let Some(b) = s.seed_base {
        eval.seed_base = b;
    }
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok(Loaded { ck, dir, env, eval })
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut l = load(&a.source)?;
    if let Some(m) = a.multipliers {
        l.eval.epsilon_multipliers = m;
    }
    if let Some(k) = a.attack {
        l.eval.attack = Some(k.kind(a.horizon));
    }
    if let Some(s) = a.attack_steps {
        l.eval.attack_steps = s;
    }
    if a.awc {
        l.eval.awc = true;
    }
    if let Some(b) = a.awc_budget {
        l.eval.awc_budget = b;
    }
    let out = a.out.unwrap_or_else(|| l.dir.clone());
    let (report, timing) = harness::evaluate(&l.ck, &l.eval, l.env.as_ref(), Some(&out))?;
    println!(
        "nominal {:.3} ± {:.3} over {} episodes",
        report.nominal.mean, report.nominal.sem, report.episodes
    );
    for row in &report.attacks {
        println!(
            "eps {:.4}: {:.3} ± {:.3}",
            row.attack.epsilon, row.stats.mean, row.stats.sem
        );
    }
    if let Some(g) = &report.gwc {
        let mean = g.rewards.iter().sum::<f64>() / g.rewards.len().max(1) as f64;
        println!("gwc (eps {:.4}): {mean:.3}", g.epsilon);
    }
    if let Some(acr) = report.acr {
        println!("acr: {acr:.3}");
    }
    println!("wrote {} ({:.1}s)", out.display(), timing.seconds);
    Ok(())
}

fn attack(a: AttackArgs) -> Result<()> {
    let l = load(&a.source)?;
    let net = network_from_checkpoint(&l.ck)?;
    harness::check_compatible(&net, l.env().build()?.spec())?;
    let cfg = AttackConfig {
        kind: a.kind.kind(a.horizon),
        epsilon: a.epsilon.unwrap_or(l.train_eps()),
        steps: a.steps,
        step_size: a.step_size,
        seed: a.seed,
    };
    let dynamics = match cfg.kind {
        AttackKind::Compounding { .. } => {
            let samples = collect_dynamics_samples(&net, l.env(), 20, l.ck.config.seed)?;
            let fit = radial_core::attacks::DynamicsFitConfig {
                seed: l.ck.config.seed,
                ..Default::default()
            };
            let (model, mse) = radial_core::attacks::fit_dynamics(&samples, &fit)?;
            println!("dynamics model validation mse {mse:.3e}");
            Some(model)
        }
        _ => None,
    };
    let seeds = l.eval.seeds();
    let clean = nominal_reward(&net, l.env(), &seeds)?;
    let attacked = reward_under_attack(&net, l.env(), &cfg, &seeds, dynamics.as_ref())?;
    println!("nominal  {:.3} ± {:.3}", clean.mean, clean.sem);
    println!("attacked {:.3} ± {:.3} (eps {})", attacked.mean, attacked.sem, cfg.epsilon);
    Ok(())
}

fn worst_case_gwc(a: WorstCaseArgs) -> Result<()> {
    let l = load(&a.source)?;
    let net = network_from_checkpoint(&l.ck)?;
    let eps = a.epsilon.unwrap_or(l.train_eps());
    let seeds = l.eval.seeds();
    let res = par_episodes(l.env(), &seeds, |e, s| gwc(&net, e, eps, s))?;
    for (s, r) in seeds.iter().zip(&res) {
        println!("seed {s}: gwc {} ({} steps)", r.reward, r.steps);
    }
    let mean = res.iter().map(|r| r.reward).sum::<f64>() / res.len().max(1) as f64;
    println!("mean gwc {mean:.3} at eps {eps}");
    Ok(())
}

fn worst_case_awc(a: AwcArgs) -> Result<()> {
    let l = load(&a.source)?;
    let net = network_from_checkpoint(&l.ck)?;
    let eps = a.epsilon.unwrap_or(l.train_eps());
    let seeds = l.eval.seeds();
    let res = par_episodes(l.env(), &seeds, |e, s| awc(&net, e, eps, s, a.budget))?;
    for (s, r) in seeds.iter().zip(&res) {
        match r {
            AwcOutcome::Exact { reward, nodes } => println!("seed {s}: awc {reward} ({nodes} nodes)"),
            AwcOutcome::BudgetExhausted { upper_bound, nodes } => println!(
                "seed {s}: budget exhausted after {nodes} nodes; awc <= {}",
                upper_bound.map_or("?".into(), |b| b.to_string())
            ),
        }
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let l = load(&a.source)?;
    let net = network_from_checkpoint(&l.ck)?;
    let mut env = l.env().build()?;
    harness::check_compatible(&net, env.spec())?;
    let range = env.spec().observation_range;
    // Observations along greedy episodes.
    let mut observations = Vec::new();
    for s in l.eval.seeds() {
        let mut obs = env.reset(s);
        while !env.is_done() {
            observations.push(obs.clone());
            let out = net.forward(&Tensor::vector(obs.clone())?)?;
            let action = radial_core::agents::greedy_from(&out)?;
            obs = env.step(&action)?.observation;
        }
    }
    let radii = a.epsilon.unwrap_or_else(|| vec![l.train_eps()]);
    let mut rng = seeded(a.seed, 0);
    let mut ok = true;
    for eps in radii {
        let r = sampled_containment(&net, &observations, eps, range, a.samples, &mut rng)?;
        println!(
            "eps {eps}: {} observations, {} samples, {} violations (max excess {:.3e})",
            r.observations, r.samples, r.violations, r.max_excess
        );
        ok &= r.violations == 0;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
