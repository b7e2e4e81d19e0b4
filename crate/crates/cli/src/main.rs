use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use magchunk::dataset::episode::init_empty;
use magchunk::dataset::{all_samples, generate_dataset, Dataset, GenConfig, NormStats, Split};
use magchunk::eval::{
    closed_loop_eval, evaluate_offline, write_report, Agent, ClosedLoopConfig, Report,
};
use magchunk::magsim::{build_workspace, export_workspaces, SimConfig, Simulator, TaskId};
use magchunk::policy::{load_policy, ModelConfig};
use magchunk::runtime::{run_rollout, RolloutConfig, DEFAULT_LAMBDA};
use magchunk::train::{grad_check, train_loop, TrainConfig};
use magchunk_server::{PolicyHandle, SessionConfig};

/// Grad-check pass threshold on the max relative error.
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "magchunk",
    version,
    about = "Phase-conditioned action chunking for magnetic micromanipulation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted-expert episodes into a dataset directory.
    GenData(GenArgs),
    /// Summarize a dataset directory.
    Inspect { dir: PathBuf },
    /// Train a policy on a dataset.
    Train(TrainArgs),
    /// Offline metrics on a split, optionally with closed-loop trials.
    Eval(EvalArgs),
    /// Run one closed-loop episode and write its trajectory log.
    Rollout(RolloutArgs),
    /// Finite-difference check of the analytic gradients on a tiny model.
    GradCheck(GradArgs),
    /// Closed-loop success of the scripted expert.
    Calibrate(CalibrateArgs),
    /// Write every task's geometry as JSON.
    ExportWorkspaces {
        #[arg(long)]
        out: PathBuf,
    },
    /// Websocket server for teleoperation and live rollouts.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 75)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    max_steps: usize,
    #[arg(long, default_value_t = 0.3)]
    perturb_prob: f64,
    #[arg(long, default_value_t = 30.0)]
    perturb_std: f64,
    /// Append the coarse occupancy grid to observations.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    history_dropout: f64,
    #[arg(long, default_value_t = 250)]
    eval_every: usize,
    #[arg(long)]
    no_augment: bool,
    /// Small model for smoke runs.
    #[arg(long)]
    tiny: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, alias = "out")]
    report: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Closed-loop trials per task; 0 skips them.
    #[arg(long, default_value_t = 0)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    max_steps: usize,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: TaskId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the task's first prompt.
    #[arg(long)]
    prompt: Option<usize>,
    #[arg(long, default_value_t = 400)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    replan_every: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint enabling `start_rollout`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset directory for recordings; created when missing.
    #[arg(long)]
    record_dir: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}' (train, val, test)")),
    }
}

fn parse_task(s: &str) -> Result<TaskId, String> {
    s.parse().map_err(|e: magchunk::Error| e.to_string())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(a: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        n_episodes: a.episodes,
        seed: a.seed,
        max_steps: a.max_steps,
        with_grid: a.grid,
        perturb_prob: a.perturb_prob,
        perturb_std: a.perturb_std,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&cfg, &a.out)?;
    let (tr, va, te) = ds.meta.split_counts();
    println!(
        "wrote {} episodes ({tr}/{va}/{te} train/val/test, {} frames, {} regenerated) to {}",
        ds.meta.n_episodes,
        ds.meta.total_frames,
        ds.meta.regenerated,
        a.out.display()
    );
    Ok(())
}

fn inspect(dir: &Path) -> Result<()> {
    let ds = Dataset::load(dir)?;
    for ep in &ds.episodes {
        ep.validate()?;
    }
    let (tr, va, te) = ds.meta.split_counts();
    let per_task: Vec<String> = TaskId::ALL
        .iter()
        .map(|t| {
            let n = ds.meta.episodes.iter().filter(|e| e.task_id == *t).count();
            format!("{t}={n}")
        })
        .collect();
    println!(
        "{} episodes, {} frames, split {tr}/{va}/{te}, tasks {}",
        ds.episodes.len(),
        ds.meta.total_frames,
        per_task.join(" ")
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let base = if a.tiny {
        ModelConfig::tiny()
    } else {
        ModelConfig::default()
    };
    let model = ModelConfig {
        seed: a.seed,
        use_grid: ds.meta.with_grid,
        ..base
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        lr_max: a.lr,
        seed: a.seed,
        eval_every: a.eval_every,
        augment: !a.no_augment,
        history_dropout: a.history_dropout,
        ..TrainConfig::default()
    };
    let out = train_loop(&ds, &model, &cfg, &a.out)?;
    let last = out.log.last().context("empty training log")?;
    println!(
        "trained {} steps, final loss {:.4}, best step {}, checkpoint {}",
        out.log.len(),
        last.loss_total,
        out.best_step,
        out.checkpoint.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (policy, stats) = load_policy(&a.ckpt, None)?;
    let ds = Dataset::load(&a.data)?;
    let samples = all_samples(ds.episodes_in(a.split), &stats)?;
    ensure!(!samples.is_empty(), "split {:?} has no samples", a.split);
    let metrics = evaluate_offline(&policy, &samples, &stats)?;
    let closed_loop = if a.trials > 0 {
        let rollout = RolloutConfig::default();
        let cl = ClosedLoopConfig {
            n_trials: a.trials,
            seed: a.seed,
            max_steps: a.max_steps,
            sim: ds.meta.sim_config.clone(),
        };
        let agent = Agent::Policy {
            policy: &policy,
            stats: &stats,
            rollout: &rollout,
        };
        Some(closed_loop_eval(agent, &TaskId::ALL, &cl)?)
    } else {
        None
    };
    let report = Report::new(metrics, closed_loop);
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_report(&report, &a.report)?;
    let m = &report.metrics;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    let mut line = format!(
        "{} samples: RMSE {:.2} ticks, direction {}, phase {}",
        m.n_samples,
        m.rmse_overall,
        pct(m.direction_accuracy),
        pct(Some(m.phase_acc_overall))
    );
    if let Some(cl) = &report.closed_loop {
        for r in &cl.rows {
            line += &format!(
                ", {} {:.0}%/{:.0}%",
                r.task,
                100.0 * r.approach_success,
                100.0 * r.transport_success
            );
        }
    }
    println!("{line} -> {}", a.report.display());
    Ok(())
}

fn rollout(a: RolloutArgs) -> Result<()> {
    let (policy, stats) = load_policy(&a.ckpt, None)?;
    let bank = magchunk::dataset::build_prompt_bank();
    let prompt = match a.prompt {
        Some(p) => {
            ensure!(
                bank.task_of(p) == Some(a.task),
                "prompt {p} does not describe task {}",
                a.task
            );
            p
        }
        None => bank.prompts_for(a.task)[0],
    };
    let sim = Simulator::new(
        build_workspace(a.task),
        SimConfig {
            rng_seed: a.seed,
            ..SimConfig::default()
        },
    )?;
    let cfg = RolloutConfig {
        max_steps: a.max_steps,
        replan_every: a.replan_every,
        lambda: a.lambda,
        ..RolloutConfig::default()
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut log = Vec::new();
    let r = run_rollout(&policy, &stats, sim, prompt, &cfg, Some(&mut log))?;
    fs::write(&a.out, log).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "task {} seed {}: {} steps, approach {}, transport {} -> {}",
        a.task,
        a.seed,
        r.steps.len(),
        r.success.approach_done,
        r.success.transport_done,
        a.out.display()
    );
    Ok(())
}

fn grad_check_cmd(a: GradArgs) -> Result<bool> {
    let ds = magchunk::dataset::generate(&GenConfig {
        n_episodes: 12,
        seed: a.seed,
        ..GenConfig::default()
    })?;
    let samples = all_samples(ds.episodes_in(Split::Train), &ds.stats)?;
    let sample = samples.get(samples.len() / 2).context("no samples")?;
    let cfg = ModelConfig {
        seed: a.seed,
        ..ModelConfig::tiny()
    };
    let report = grad_check(&cfg, sample)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    let pass = report.max_rel_error < GRAD_TOL;
    println!(
        "{}: max relative error {:.2e} ({}) over {} scalars in {} groups",
        if pass { "pass" } else { "FAIL" },
        report.max_rel_error,
        report.worst_group,
        report.n_scalars,
        report.groups.len()
    );
    Ok(pass)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let cfg = ClosedLoopConfig {
        n_trials: a.trials,
        seed: a.seed,
        ..ClosedLoopConfig::default()
    };
    let table = closed_loop_eval(Agent::Expert, &TaskId::ALL, &cfg)?;
    if let Some(out) = &a.out {
        write_json(out, &table)?;
    }
    let parts: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{} {:.0}%", r.task, 100.0 * r.transport_success))
        .collect();
    println!("expert transport success: {}", parts.join(", "));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let policy = match &a.ckpt {
        Some(path) => {
            let (policy, stats) = load_policy(path, None)?;
            Some(Arc::new(PolicyHandle { policy, stats }))
        }
        None => None,
    };
    let mut with_grid = false;
    if let Some(dir) = &a.record_dir {
        if dir.join("meta.json").exists() {
            with_grid = Dataset::load(dir)?.meta.with_grid;
        } else {
            init_empty(dir, SimConfig::default(), NormStats::default())?;
        }
    }
    if let Some(p) = &policy {
        if p.policy.config().use_grid != with_grid && a.record_dir.is_some() {
            bail!("checkpoint and recording directory disagree on the occupancy grid");
        }
        with_grid = p.policy.config().use_grid;
    }
    let cfg = SessionConfig {
        sim: SimConfig {
            rng_seed: a.seed,
            ..SimConfig::default()
        },
        record_dir: a.record_dir.clone(),
        with_grid,
        policy,
        ..SessionConfig::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        println!("listening on ws://{}", listener.local_addr()?);
        magchunk_server::serve(listener, cfg).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Inspect { dir } => inspect(&dir),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Rollout(a) => rollout(a),
        Cmd::GradCheck(a) => match grad_check_cmd(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Cmd::Calibrate(a) => calibrate(a),
        Cmd::ExportWorkspaces { out } => {
            write_json(&out, &export_workspaces()).map(|_| println!("wrote {}", out.display()))
        }
        Cmd::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
