use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clrlab_core::harness::{
    batch_sweep, compare_policies, landscape_from_run, parse_policy_token, save_run, train, verify_run, HarnessError,
    RunConfig, RunStatus, ScheduleSpec,
};
use clrlab_core::landscape::LandscapeError;
use clrlab_core::range_test::{run_range_test, select_lr_bounds, AnalyzerTolerances, MaxChoice, RangeTestConfig, RangeTestError, SweepMode};
use clrlab_core::LrBounds;

#[derive(Parser)]
#[command(name = "clrlab", version, about = "Cyclical learning-rate experiments on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the learning rate upward and pick CLR bounds from the loss curve.
    RangeTest(RangeTestArgs),
    /// Train one run and write its records.
    Train(TrainArgs),
    /// Train several policies on the same setup and rank them.
    Compare(CompareArgs),
    /// Train the same config at several batch sizes.
    BatchSweep(SweepArgs),
    /// Project a run's checkpoints with PCA and evaluate the loss surface.
    Landscape(LandscapeArgs),
    /// Check that a run's recorded learning rates replay exactly.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RangeTestArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    lr_start: f64,
    #[arg(long)]
    lr_end: f64,
    /// Geometric instead of linear sweep.
    #[arg(long)]
    log_sweep: bool,
    /// Sweep length; defaults to the config's total steps (at least 100).
    #[arg(long)]
    steps: Option<usize>,
    /// Report the stability-limit bound instead of the end-of-descent bound as max_lr.
    #[arg(long)]
    use_mlr2: bool,
    /// Output directory; defaults to `<output_dir>/range_test`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Bounds JSON from `range-test`; overrides the CLR base and max learning rates.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Run directory; defaults to `<output_dir>/<run name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated run names, e.g. `adam_cyc_nshrink_5e-4,adam_inv_5e-4`.
    #[arg(long, value_delimiter = ',', required = true)]
    policies: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Half-width of the grid in PCA units; defaults to 1.2x the trajectory radius.
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    /// Defaults to `<run_dir>/landscape`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_ANALYZER: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RangeTest(a) => range_test(a),
        Command::Train(a) => train_cmd(a),
        Command::Compare(a) => compare(a),
        Command::BatchSweep(a) => sweep(a),
        Command::Landscape(a) => landscape(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Config(_) => EXIT_CONFIG,
                HarnessError::RangeTest(r) => range_code(r),
                HarnessError::Landscape(LandscapeError::Resolution(_) | LandscapeError::BadExtent(_)) => EXIT_CONFIG,
                _ => 1,
            };
        }
        if let Some(r) = cause.downcast_ref::<RangeTestError>() {
            return range_code(r);
        }
    }
    1
}

fn range_code(err: &RangeTestError) -> u8 {
    match err {
        RangeTestError::InvalidConfig(_) => EXIT_CONFIG,
        RangeTestError::ImmediateDivergence { .. }
        | RangeTestError::TooFewSamples(_)
        | RangeTestError::NoLearnableRegion
        | RangeTestError::StillDecreasing { .. } => EXIT_ANALYZER,
        _ => 1,
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &LrBounds) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn range_test(a: RangeTestArgs) -> Result<u8> {
    let cfg = load_config(&a.config)?;
    let task = cfg.task.build(cfg.run.seed)?;
    let mut rt = RangeTestConfig::new(a.lr_start, a.lr_end, a.steps.unwrap_or(cfg.total_steps().max(100) as usize));
    rt.batch_size = cfg.run.batch_size;
    rt.seed = cfg.run.seed;
    rt.sweep = if a.log_sweep { SweepMode::Logarithmic } else { SweepMode::Linear };

    let curve = run_range_test(task.as_ref(), &cfg.optimizer, &rt)?;
    let out = a.out.unwrap_or_else(|| cfg.run.output_dir.join("range_test"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("curve.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    curve.write_csv(file)?;

    let choice = if a.use_mlr2 { MaxChoice::Mlr2 } else { MaxChoice::Mlr1 };
    let bounds = select_lr_bounds(&curve, &AnalyzerTolerances::default())?.with_choice(choice);
    write_json(&out.join("bounds.json"), &bounds)?;
    println!("{}", serde_json::to_string(&bounds)?);
    Ok(0)
}

fn train_cmd(a: TrainArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(path) = &a.bounds {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let bounds: LrBounds = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad bounds file {}: {e}", path.display())))?;
        match &mut cfg.schedule {
            ScheduleSpec::Clr { base_lr, max_lr, .. } => {
                *base_lr = bounds.base_lr;
                *max_lr = bounds.chosen_max;
            }
            _ => return Err(HarnessError::Config("--bounds needs a clr schedule in the config".into()).into()),
        }
    }
    let run = train(&cfg)?;
    let dir = a.out.unwrap_or_else(|| cfg.run.output_dir.join(&run.name));
    save_run(&run, &dir)?;

    let last = run.epochs.last();
    let summary = serde_json::json!({
        "name": run.name,
        "run_dir": dir,
        "status": run.status,
        "final_val_loss": last.map(|e| e.val_loss),
        "final_val_metric": last.map(|e| e.val_metric),
        "best_epoch": run.best().map(|b| b.0),
        "best_val_metric": run.best().map(|b| b.1),
    });
    println!("{summary}");
    Ok(match run.status {
        RunStatus::Completed => 0,
        RunStatus::Diverged { .. } => EXIT_DIVERGED,
        RunStatus::Error { .. } => 1,
    })
}

fn compare(a: CompareArgs) -> Result<u8> {
    let base = RunConfig::load(&a.config)?;
    let configs = a
        .policies
        .iter()
        .map(|p| parse_policy_token(p).map(|t| t.apply(&base)))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare_policies(&configs)?;
    let out = a.out.unwrap_or_else(|| base.run.output_dir.join("compare"));
    report.save(&out)?;
    println!("{:<4} {:<28} {:>10} {:>6}  status", "rank", "policy", "best", "epoch");
    for row in &report.rows {
        let best = row.best_val_metric.map_or("-".into(), |v| format!("{v:.4}"));
        let epoch = row.best_epoch.map_or("-".into(), |e| e.to_string());
        let status = match row.diverged_step {
            Some(s) => format!("diverged@{s}"),
            None => "ok".into(),
        };
        println!("{:<4} {:<28} {:>10} {:>6}  {status}", row.rank, row.name, best, epoch);
    }
    Ok(0)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let base = RunConfig::load(&a.config)?;
    let report = batch_sweep(&base, &a.sizes)?;
    let out = a.out.unwrap_or_else(|| base.run.output_dir.join(format!("{}_sweep", base.run_name())));
    report.save(&out)?;
    for e in &report.entries {
        let best = e.best_val.map_or("-".into(), |v| format!("{v:.5}"));
        println!("batch {:>5}  best val loss {best:>10}  diverged {}", e.batch_size, e.diverged);
    }
    Ok(0)
}

fn landscape(a: LandscapeArgs) -> Result<u8> {
    let out = a.out.unwrap_or_else(|| a.run_dir.join("landscape"));
    let report = landscape_from_run(&a.run_dir, &out, a.extent, a.resolution)?;
    let p = &report.projection;
    println!(
        "explained variance {:.4} + {:.4}{}; wrote {}",
        p.explained_variance[0],
        p.explained_variance[1],
        if p.degenerate { " (degenerate)" } else { "" },
        out.display()
    );
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8> {
    let report = verify_run(&a.run_dir)?;
    if !report.is_ok() {
        bail!(
            "{} of {} learning rates differ from the schedule (first at step {})",
            report.mismatches.len(),
            report.steps_checked,
            report.mismatches[0]
        );
    }
    println!("ok: {} learning rates replay exactly", report.steps_checked);
    Ok(0)
}
