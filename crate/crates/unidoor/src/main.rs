//! Command-line front end for the backdoor attack laboratory.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use unidoor::attack::AttackStrategy;
use unidoor::envs::{make_env, EnvName};
use unidoor::harness::{
    self, activation_rollout, defend, load_config, load_seed_policies, load_tasks, run,
    stealth_report, BoundsMode, DefendMode, ExperimentConfig,
};
use unidoor::monitor::known_bounds;
use unidoor::trainers::Algorithm;

#[derive(Parser)]
#[command(
    name = "unidoor",
    version,
    about = "Action-level backdoor attacks on DRL agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (key = value sections); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: cartpole, mountaincar, pendulum.
    #[arg(long)]
    env: Option<EnvName>,
    /// Trainer: ppo or ddpg.
    #[arg(long)]
    algo: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Backdoor task catalog indices.
    #[arg(long, value_delimiter = ',')]
    task: Vec<usize>,
    /// Attack strategy: unidoor, trojdrl, idt, badrl[:v], tw, fixed:<r>.
    #[arg(long)]
    strategy: Option<String>,
    /// Total training steps override.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a benign policy (no attack).
    Train(CommonArgs),
    /// Run the full attack pipeline and evaluate it.
    Attack(CommonArgs),
    /// Evaluate a saved policy: BTP, ASR, CP, optional stealth report.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Run or seed directory containing actor.json/critic.json.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        /// Benign reference run directory: adds action-divergence stats and
        /// states.csv / activations.csv stealth dumps.
        #[arg(long)]
        stealth_reference: Option<PathBuf>,
        /// States sampled per policy for the stealth comparison.
        #[arg(long, default_value_t = 10_000)]
        stealth_states: usize,
    },
    /// Persistent-trigger rollouts of a backdoored policy.
    Activate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        policy: PathBuf,
        /// Trigger index within the task (all triggers when omitted).
        #[arg(long)]
        trigger: Option<usize>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Run the module-ablation matrix for the unidoor strategy.
    Ablate(CommonArgs),
    /// Fixed-reward sweep over a grid of backdoor rewards.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated fixed rewards.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0, 8.0, 16.0])]
        rewards: Vec<f64>,
    },
    /// Retrain a backdoored policy with a fine-tuning defense.
    Defend {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        policy: PathBuf,
        /// finetune or superfinetune.
        #[arg(long, default_value = "finetune")]
        mode: String,
    },
}

/// Builds the effective config: file (if given) -> env defaults -> flags.
fn build_config(common: &CommonArgs, default_strategy: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let env = common
                .env
                .context("--env is required when no --config is given")?;
            let algo: Algorithm = match &common.algo {
                Some(a) => a.parse().map_err(|e: String| anyhow::anyhow!(e))?,
                None => Algorithm::Ppo,
            };
            ExperimentConfig::new(env, algo)
        }
    };
    if let Some(env) = common.env {
        if common.config.is_some() && env != cfg.env {
            bail!("--env {} conflicts with config env {}", env, cfg.env);
        }
    }
    if let Some(a) = &common.algo {
        cfg.algorithm = a.parse().map_err(|e: String| anyhow::anyhow!(e))?;
        cfg.trainer.algorithm = cfg.algorithm;
    }
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    if !common.task.is_empty() {
        cfg.tasks = common.task.clone();
    }
    if let Some(s) = &common.strategy {
        cfg.strategy = if s == "benign" {
            None
        } else {
            Some(s.parse().map_err(|e: String| anyhow::anyhow!(e))?)
        };
    } else if cfg.strategy.is_none() {
        if let Some(name) = default_strategy {
            cfg.strategy = Some(name.parse().map_err(|e: String| anyhow::anyhow!(e))?);
        }
    }
    if let Some(steps) = common.steps {
        cfg.trainer.total_steps = steps;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn print_report(report: &harness::RunReport) {
    for seed in &report.seeds {
        match (&seed.evaluation, &seed.error) {
            (Some(ev), _) => println!(
                "seed {:>3}: BTP {:.3}  ASR {:.3}  CP {:.3}  (raw return {:.1}, poisoned {})",
                seed.seed, ev.btp, ev.asr, ev.cp, ev.mean_raw_return, seed.poisoned_transitions
            ),
            (None, Some(err)) => println!("seed {:>3}: FAILED: {err}", seed.seed),
            _ => {}
        }
    }
    if let Some(agg) = &report.aggregate {
        println!(
            "median: BTP {:.3}  ASR {:.3}  CP {:.3}   mean: BTP {:.3}  ASR {:.3}  CP {:.3}",
            agg.median_btp, agg.median_asr, agg.median_cp, agg.mean_btp, agg.mean_asr, agg.mean_cp
        );
    }
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let mut cfg = build_config(common, None)?;
    cfg.strategy = None;
    cfg.tasks.clear();
    let report = run(&cfg)?;
    print_report(&report);
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_attack(common: &CommonArgs) -> Result<()> {
    let cfg = build_config(common, Some("unidoor"))?;
    let report = run(&cfg)?;
    print_report(&report);
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn cmd_evaluate(
    common: &CommonArgs,
    policy_dir: &Path,
    episodes: usize,
    probes: usize,
    stealth_reference: Option<&PathBuf>,
    stealth_states: usize,
) -> Result<()> {
    let mut cfg = build_config(common, None)?;
    cfg.eval.episodes = episodes;
    cfg.eval.probes = probes;
    let tasks = load_tasks(&cfg.tasks)?;
    let bounds = match cfg.bounds {
        BoundsMode::Fixed(lo, hi) => (lo, hi),
        _ => known_bounds(cfg.env).context("no published bounds; pass bounds = lo,hi")?,
    };
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let pair = load_seed_policies(policy_dir, seed)?;
        let mut env = make_env(cfg.env, seed.wrapping_add(0x5EED));
        let ev = harness::evaluate(
            &pair.actor,
            &mut env,
            &tasks,
            cfg.eval.episodes,
            cfg.eval.probes,
            bounds,
            cfg.attack.epsilon,
            seed,
        )?;
        println!(
            "seed {:>3}: BTP {:.3}  ASR {:.3}  CP {:.3}  (raw return {:.1})",
            seed, ev.btp, ev.asr, ev.cp, ev.mean_raw_return
        );
        let mut row = serde_json::json!({
            "seed": seed, "btp": ev.btp, "asr": ev.asr, "cp": ev.cp,
            "per_trigger_asr": ev.per_trigger_asr, "mean_raw_return": ev.mean_raw_return,
        });
        if let Some(reference) = stealth_reference {
            let benign = load_seed_policies(reference, seed)?;
            let dump_dir = common.out.as_ref().map(|o| o.join(format!("seed_{seed}")));
            let mut env = make_env(cfg.env, seed.wrapping_add(0x571));
            let rep = stealth_report(
                &benign.actor,
                &pair.actor,
                &mut env,
                stealth_states,
                cfg.attack.epsilon,
                seed,
                dump_dir.as_deref(),
            )?;
            println!(
                "seed {:>3}: stealth KL {:.4}/{:.4}, deterministic agreement {:.3}",
                seed, rep.kl_benign_backdoored, rep.kl_backdoored_benign, rep.agreement_rate
            );
            row["stealth"] = serde_json::json!({
                "kl_benign_backdoored": rep.kl_benign_backdoored,
                "kl_backdoored_benign": rep.kl_backdoored_benign,
                "agreement_rate": rep.agreement_rate,
                "n_states": rep.n_states,
            });
        }
        results.push(row);
    }
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("evaluation.json"),
            serde_json::to_string_pretty(&results)?,
        )?;
    }
    Ok(())
}

fn cmd_activate(
    common: &CommonArgs,
    policy_dir: &Path,
    trigger: Option<usize>,
    episodes: usize,
) -> Result<()> {
    let cfg = build_config(common, None)?;
    let tasks = load_tasks(&cfg.tasks)?;
    let task = tasks.first().context("activate needs --task")?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let pair = load_seed_policies(policy_dir, seed)?;
        let triggers: Vec<usize> = match trigger {
            Some(t) => vec![t],
            None => (0..task.n_triggers()).collect(),
        };
        for t in triggers {
            let mut env = make_env(cfg.env, seed.wrapping_add(0xAC));
            let rep = activation_rollout(&pair.actor, &mut env, task, t, episodes, seed)?;
            let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len().max(1) as f64;
            let mean_f = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            println!(
                "seed {:>3} trigger {t}: triggered steps {:.1} return {:.1} (capped {}/{}) | control steps {:.1} return {:.1}",
                seed,
                mean(&rep.triggered_steps),
                mean_f(&rep.triggered_returns),
                rep.triggered_capped.iter().filter(|c| **c).count(),
                rep.triggered_capped.len(),
                mean(&rep.control_steps),
                mean_f(&rep.control_returns),
            );
            reports.push(rep);
        }
    }
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("activation.json"),
            serde_json::to_string_pretty(&reports)?,
        )?;
    }
    Ok(())
}

fn cmd_ablate(common: &CommonArgs) -> Result<()> {
    let base = build_config(common, Some("unidoor"))?;
    type Toggle = fn(&mut ExperimentConfig);
    let variants: [(&str, Toggle); 5] = [
        ("full", |_| {}),
        ("no_ewa", |c| c.flags.no_ewa = true),
        ("no_freeze", |c| c.flags.no_freeze = true),
        ("no_action_tamper", |c| c.flags.no_action_tamper = true),
        ("no_adaptive", |c| c.flags.no_adaptive = true),
    ];
    let mut summary = Vec::new();
    for (name, apply) in variants {
        let mut cfg = base.clone();
        apply(&mut cfg);
        cfg.out_dir = base.out_dir.join(name);
        println!("--- ablation variant: {name}");
        let report = run(&cfg)?;
        print_report(&report);
        if let Some(agg) = report.aggregate {
            summary.push(serde_json::json!({
                "variant": name,
                "median_btp": agg.median_btp,
                "median_asr": agg.median_asr,
                "median_cp": agg.median_cp,
            }));
        }
    }
    std::fs::create_dir_all(&base.out_dir)?;
    std::fs::write(
        base.out_dir.join("ablation.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, rewards: &[f64]) -> Result<()> {
    let base = build_config(common, Some("fixed:1"))?;
    let mut summary = Vec::new();
    for &r in rewards {
        let mut cfg = base.clone();
        cfg.strategy = Some(AttackStrategy::Fixed { r });
        cfg.out_dir = base.out_dir.join(format!("r_{r}"));
        println!("--- fixed backdoor reward r = {r}");
        let report = run(&cfg)?;
        print_report(&report);
        if let Some(agg) = report.aggregate {
            summary.push(serde_json::json!({
                "r": r,
                "median_btp": agg.median_btp,
                "median_asr": agg.median_asr,
                "median_cp": agg.median_cp,
            }));
        }
    }
    std::fs::create_dir_all(&base.out_dir)?;
    std::fs::write(
        base.out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn cmd_defend(common: &CommonArgs, policy_dir: &Path, mode_str: &str) -> Result<()> {
    let cfg = build_config(common, None)?;
    let mode: DefendMode = mode_str.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let tasks = load_tasks(&cfg.tasks)?;
    let bounds = match cfg.bounds {
        BoundsMode::Fixed(lo, hi) => (lo, hi),
        _ => known_bounds(cfg.env).context("no published bounds; pass bounds = lo,hi")?,
    };
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    for &seed in &cfg.seeds {
        let pair = load_seed_policies(policy_dir, seed)?;
        let mut env = make_env(cfg.env, seed.wrapping_add(0xDEF));
        let (policy, curves) = defend(
            pair.actor,
            pair.critic,
            &mut env,
            &tasks,
            mode,
            cfg.trainer.total_steps,
            cfg.trainer.clone(),
            bounds,
            cfg.attack.epsilon,
            seed,
        )?;
        let seed_dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        unidoor::policy::save_policy(&policy, &seed_dir.join("actor_defended.json"))?;
        let mut csv = String::from("step,btp,asr,lr\n");
        for p in &curves {
            csv.push_str(&format!("{},{},{},{}\n", p.step, p.btp, p.asr, p.lr));
        }
        std::fs::write(seed_dir.join("defend.csv"), csv)?;
        harness::write_line_chart(
            &seed_dir.join("defend.svg"),
            &format!("{mode_str} retraining"),
            &[
                harness::ChartSeries {
                    label: "BTP".into(),
                    points: curves.iter().map(|p| (p.step as f64, p.btp)).collect(),
                },
                harness::ChartSeries {
                    label: "ASR".into(),
                    points: curves.iter().map(|p| (p.step as f64, p.asr)).collect(),
                },
            ],
        )?;
        if let (Some(first), Some(last)) = (curves.first(), curves.last()) {
            println!(
                "seed {seed}: ASR {:.3} -> {:.3}, BTP {:.3} -> {:.3} over {} steps",
                first.asr, last.asr, first.btp, last.btp, cfg.trainer.total_steps
            );
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Attack(c) => cmd_attack(c),
        Command::Evaluate {
            common,
            policy,
            episodes,
            probes,
            stealth_reference,
            stealth_states,
        } => cmd_evaluate(
            common,
            policy,
            *episodes,
            *probes,
            stealth_reference.as_ref(),
            *stealth_states,
        ),
        Command::Activate {
            common,
            policy,
            trigger,
            episodes,
        } => cmd_activate(common, policy, *trigger, *episodes),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Sweep { common, rewards } => cmd_sweep(common, rewards),
        Command::Defend {
            common,
            policy,
            mode,
        } => cmd_defend(common, policy, mode),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        // machine-readable error record on stderr
        eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
        std::process::exit(1);
    }
}
