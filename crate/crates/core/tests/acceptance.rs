//! End-to-end acceptance suite. Runs without the libtest harness so each
//! criterion prints a single PASS/FAIL line; the process exits non-zero if
//! any criterion fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- 6 7`.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradcheck, oracle};
use radial_core::eval::{EvalReport, RewardStats};
use radial_core::harness::{
    self, presets, Checkpoint, FINAL_CHECKPOINT, METRICS_FILE, STANDARD_CHECKPOINT,
};
use radial_core::radial::Approach;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn ibp_soundness() -> Verdict {
    let t = Instant::now();
    let s = oracle::ibp_soundness(100, 20, 1000);
    let elapsed = t.elapsed();
    Verdict::new(
        s.violations == 0 && s.networks >= 100 && within(elapsed, minutes(2)),
        format!(
            "{} networks, {} cases, {} sampled perturbations, {} violations",
            s.networks, s.cases, s.samples, s.violations
        ),
    )
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let mut checks: Vec<(String, f64)> = vec![
        ("td".into(), gradcheck::td_loss()),
        ("actor_critic".into(), gradcheck::actor_critic_loss()),
        ("ppo".into(), gradcheck::ppo_loss()),
        ("q_overlap".into(), gradcheck::q_overlap_loss()),
        ("q_overlap_symmetric".into(), gradcheck::q_overlap_symmetric_loss()),
        ("policy_overlap".into(), gradcheck::policy_overlap_loss()),
        ("ppo_worst_case".into(), gradcheck::ppo_worst_case_loss()),
        ("td_worst_case".into(), gradcheck::td_worst_case_loss()),
        ("actor_critic_worst_case".into(), gradcheck::actor_critic_worst_case_loss()),
    ];
    for a in [Approach::One, Approach::Two, Approach::TwoSymmetric] {
        checks.push((format!("combined_{a:?}"), gradcheck::combined_dqn_loss(a)));
    }
    let elapsed = t.elapsed();
    let (worst_name, worst) = checks
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    Verdict::new(
        worst < gradcheck::TOLERANCE && within(elapsed, minutes(2)),
        format!(
            "{} losses x {} instances, max relative error {worst:.2e} ({worst_name})",
            checks.len(),
            gradcheck::INSTANCES
        ),
    )
}

fn reductions() -> Verdict {
    let d = oracle::reduction_identities(100);
    let worst = d.iter().cloned().fold(0.0, f64::max);
    Verdict::new(
        worst <= 1e-10,
        format!(
            "100 instances; max deviation q_overlap {:.1e}, policy_overlap {:.1e}, td {:.1e}, actor_critic {:.1e}, ppo {:.1e}",
            d[0], d[1], d[2], d[3], d[4]
        ),
    )
}

fn upper_bounds() -> Verdict {
    let s = oracle::upper_bound_property(50, 100, 1e-9);
    Verdict::new(
        s.instances >= 50 && s.violations.iter().all(|&v| v == 0),
        format!(
            "{} instances, {} checks; violations td {} / actor_critic {} / ppo {}; min gap {:.2e} / {:.2e} / {:.2e}",
            s.instances,
            s.checks,
            s.violations[0],
            s.violations[1],
            s.violations[2],
            s.min_gap[0],
            s.min_gap[1],
            s.min_gap[2]
        ),
    )
}

fn worst_case() -> Verdict {
    let t = Instant::now();
    let s = oracle::worst_case_oracle(40);
    let elapsed = t.elapsed();
    Verdict::new(
        s.instances >= 40
            && s.awc_exact_matches == s.instances
            && s.gwc_at_least_awc == s.instances
            && within(elapsed, minutes(5)),
        format!(
            "AWC = exhaustive on {}/{}, GWC >= AWC on {}/{}, GWC = AWC on {}/{} ({} with branching)",
            s.awc_exact_matches,
            s.instances,
            s.gwc_at_least_awc,
            s.instances,
            s.gwc_equals_awc,
            s.instances,
            s.branching
        ),
    )
}

/// Reward statistics of the attack row at `multiplier × ε_train`.
fn at(report: &EvalReport, eps: f64, multiplier: f64) -> &RewardStats {
    let target = multiplier * eps;
    &report
        .attacks
        .iter()
        .find(|r| (r.attack.epsilon - target).abs() <= 1e-12 * target.max(1.0))
        .unwrap_or_else(|| panic!("no attack row at ε = {target}"))
        .stats
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Trained {
    report: EvalReport,
    eps: f64,
}

fn train_and_evaluate(preset: &str, dir: &Path) -> Trained {
    let cfg = presets::get(preset).unwrap();
    let out = harness::train(&cfg, dir, |_| {}).unwrap();
    let (report, _) = harness::evaluate(&out.checkpoint, &cfg.evaluation, None, None).unwrap();
    Trained {
        report,
        eps: cfg.schedule.eps_max(),
    }
}

fn dqn_ordering(root: &Path) -> Verdict {
    let t = Instant::now();
    let std = train_and_evaluate("gridchase-dqn-standard", &root.join("gridchase-dqn-standard"));
    let rad = train_and_evaluate("gridchase-dqn-radial", &root.join("gridchase-dqn-radial"));
    let elapsed = t.elapsed();
    assert_eq!(std.eps, rad.eps, "both presets must share the training ε");
    let eps = rad.eps;

    let (sn, s1, s5) = (&std.report.nominal, at(&std.report, eps, 1.0), at(&std.report, eps, 5.0));
    let (rn, r1, r5) = (&rad.report.nominal, at(&rad.report, eps, 1.0), at(&rad.report, eps, 5.0));
    let gwc = |r: &EvalReport| {
        let row = r.gwc.as_ref().expect("GWC row");
        assert_eq!(row.epsilon, eps);
        mean(&row.rewards)
    };
    let (gs, gr) = (gwc(&std.report), gwc(&rad.report));
    let separation = 3.0 * (r5.sem.powi(2) + s5.sem.powi(2)).sqrt();

    let a = s1.mean <= 0.5 * sn.mean;
    let b1 = r1.mean >= 0.8 * rn.mean;
    let b2 = r5.mean - s5.mean > separation;
    let c = gr >= gs;
    Verdict::new(
        a && b1 && b2 && c && within(elapsed, minutes(30)),
        format!(
            "standard nominal {:.3}, PGD@ε {:.3} [{}]; RADIAL nominal {:.3}, PGD@ε {:.3} [{}]; \
             PGD@5ε RADIAL {:.3}±{:.3} vs standard {:.3}±{:.3}, gap {:.3} > {:.3} [{}]; \
             GWC@ε RADIAL {:.3} vs standard {:.3} [{}]; {:.0}s",
            sn.mean,
            s1.mean,
            ok(a),
            rn.mean,
            r1.mean,
            ok(b1),
            r5.mean,
            r5.sem,
            s5.mean,
            s5.sem,
            r5.mean - s5.mean,
            separation,
            ok(b2),
            gr,
            gs,
            ok(c),
            elapsed.as_secs_f64()
        ),
    )
}

fn ppo_ordering(root: &Path) -> Verdict {
    let t = Instant::now();
    let std = train_and_evaluate("pointmass-ppo-standard", &root.join("pointmass-ppo-standard"));
    let rad = train_and_evaluate("pointmass-ppo-radial", &root.join("pointmass-ppo-radial"));
    let elapsed = t.elapsed();
    assert_eq!(std.eps, rad.eps, "both presets must share the training ε");
    let eps = rad.eps;
    let (sn, s1) = (&std.report.nominal, at(&std.report, eps, 1.0));
    let (rn, r1) = (&rad.report.nominal, at(&rad.report, eps, 1.0));
    let episodes = r1.rewards.len();
    let retains = r1.mean >= 0.7 * rn.mean;
    let loses = s1.mean <= 0.6 * sn.mean;
    Verdict::new(
        retains && loses && within(elapsed, minutes(20)),
        format!(
            "MAD@ε={eps}: RADIAL {:.3} of nominal {:.3} ({:.0}%) [{}]; standard {:.3} of nominal {:.3} ({:.0}% lost) [{}]; \
             attacked RADIAL {} standard; {episodes} episodes; {:.0}s",
            r1.mean,
            rn.mean,
            100.0 * r1.mean / rn.mean,
            ok(retains),
            s1.mean,
            sn.mean,
            100.0 * (1.0 - s1.mean / sn.mean),
            ok(loses),
            if r1.mean > s1.mean { "beats" } else { "does not beat" },
            elapsed.as_secs_f64()
        ),
    )
}

fn attacks() -> Verdict {
    let s = oracle::attack_checks(40);
    Verdict::new(
        s.projection_violations == 0 && s.oracle_cases > 0 && s.max_oracle_gap <= 1e-6,
        format!(
            "{} attacks, {} projection violations; {} corner-oracle cases, max gap {:.1e}",
            s.attacks, s.projection_violations, s.oracle_cases, s.max_oracle_gap
        ),
    )
}

fn schedules() -> Verdict {
    let s = oracle::schedule_properties();
    Verdict::new(
        s.monotone_violations == 0 && s.continuity_violations == 0 && s.endpoint_violations == 0,
        format!(
            "{} schedules, {} grid points; violations monotone {} / continuity {} / endpoints {}",
            s.schedules, s.points, s.monotone_violations, s.continuity_violations, s.endpoint_violations
        ),
    )
}

fn metrics_body(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    text.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
}

fn same_run(a: &Path, b: &Path) -> Result<(), String> {
    if metrics_body(a) != metrics_body(b) {
        return Err("metrics differ".into());
    }
    for file in [FINAL_CHECKPOINT, STANDARD_CHECKPOINT] {
        let (pa, pb) = (a.join(file), b.join(file));
        if pa.exists() != pb.exists() {
            return Err(format!("{file} present in only one run"));
        }
        if pa.exists() {
            if fs::read(&pa).unwrap() != fs::read(&pb).unwrap() {
                return Err(format!("{file} differs"));
            }
            Checkpoint::load(&pa).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn reproducibility(root: &Path) -> Verdict {
    let mut failures = Vec::new();
    let mut checked = 0;
    for name in presets::names() {
        let first = root.join(name);
        if !first.join(FINAL_CHECKPOINT).exists() {
            let cfg = presets::get(name).unwrap();
            harness::train(&cfg, &first, |_| {}).unwrap();
        }
        let second = root.join(format!("{name}-again"));
        harness::train(&presets::get(name).unwrap(), &second, |_| {}).unwrap();
        checked += 1;
        if let Err(e) = same_run(&first, &second) {
            failures.push(format!("{name}: {e}"));
        }
    }
    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} presets trained twice: identical metrics and checkpoints")
        } else {
            failures.join("; ")
        },
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let root = tempfile::tempdir().unwrap();
    let root = root.path();

    type Criterion<'a> = (usize, &'a str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "IBP soundness", Box::new(ibp_soundness)),
        (2, "gradient correctness", Box::new(gradients)),
        (3, "reduction identities at ε = 0", Box::new(reductions)),
        (4, "worst-case losses bound perturbed losses", Box::new(upper_bounds)),
        (5, "AWC matches exhaustive search, GWC >= AWC", Box::new(worst_case)),
        (6, "DQN metric ordering on GridChase", Box::new(move || dqn_ordering(root))),
        (7, "PPO robustness on PointMass", Box::new(move || ppo_ordering(root))),
        (8, "attack projection and corner oracle", Box::new(attacks)),
        (9, "schedule properties", Box::new(schedules)),
        (10, "same-seed reproducibility", Box::new(move || reproducibility(root))),
    ];

    let mut failed = 0;
    for (n, title, run) in &criteria {
        if !wanted(*n) {
            continue;
        }
        let t = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "[{}] {n:>2}. {title}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
