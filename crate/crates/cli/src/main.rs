//! `skipstep`: train, sample, bench, ablate and verify from a TOML config.
//!
//! Exit codes: 0 success, 1 verification failure or numerical abort,
//! 2 configuration error, 3 I/O error.

mod config;

use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use skipstep::bench::{self, default_cutoff_grid, Experiment};
use skipstep::denoiser::write_checkpoint;
use skipstep::io::{write_loss_trace, write_samples};
use skipstep::metrics::names;
use skipstep::samplers::{self, make_plan, SamplerConfig, SamplerKind, StepPlan};
use skipstep::verify::run_verification;
use skipstep::{svg, Batch};

use config::{ConfigError, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "skipstep", version, about = "Skipped-step diffusion sampling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; every file written goes here.
    #[arg(short, long, env = "SKIPSTEP_OUT", default_value = "skipstep-out", global = true)]
    out: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train an MLP denoiser; writes a checkpoint and a loss trace.
    Train,
    /// Draw samples with one sampler.
    Sample,
    /// Sampler × budget × seed sweep.
    Bench,
    /// Mixed-sampler cutoff ablation.
    Ablate,
    /// Run the numerical self-checks.
    Verify,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] skipstep::Error),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use skipstep::Error as E;
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(ConfigError::Read { .. }) => 3,
            CliError::Config(_) => 2,
            CliError::Core(E::Numerical(_)) => 1,
            CliError::Core(E::Config(_) | E::Index(_) | E::Unsupported(_)) => 2,
            CliError::Core(E::Format { .. } | E::Io { .. } | E::Csv(_)) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command, common: &Common) -> Result<(), CliError> {
    let cfg = config::load(common.config.as_deref(), &common.overrides)?;
    let out = Output { dir: common.out.clone() };
    match cmd {
        Command::Train => cmd_train(&cfg, &out),
        Command::Sample => cmd_sample(&cfg, &out),
        Command::Bench => cmd_bench(&cfg, &out),
        Command::Ablate => cmd_ablate(&cfg, &out),
        Command::Verify => cmd_verify(&cfg),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    /// `dir/name`, rejecting names that would escape `dir`.
    fn path(&self, name: &Path) -> Result<PathBuf, CliError> {
        if name.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(skipstep::Error::Config(format!(
                "output name {} must be a relative path inside the output directory",
                name.display()
            ))
            .into());
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| skipstep::Error::Io { path: self.dir.clone(), source: e })?;
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| skipstep::Error::Io { path: parent.to_owned(), source: e })?;
        }
        Ok(p)
    }
}

fn cmd_train(cfg: &FileConfig, out: &Output) -> Result<(), CliError> {
    let schedule = cfg.schedule()?.build()?;
    let data = skipstep::data::generate(cfg.data()?)?;
    let tc = cfg.train.as_ref().ok_or(ConfigError::Missing("train"))?;
    info!("training {} steps on {} rows", tc.steps, data.nrows());
    let outcome = bench::train_inline(data.view(), &cfg.model.hidden, cfg.model.time_dim, tc, &schedule)?;
    let ckpt = out.path(&cfg.output.checkpoint)?;
    let trace = out.path(&cfg.output.loss_trace)?;
    write_checkpoint(&outcome.model, &ckpt)?;
    write_loss_trace(&trace, &outcome.losses)?;
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} parameters for {} steps, final loss {last:.6}\ncheckpoint: {}\nloss trace: {}",
        outcome.model.parameter_count(),
        outcome.losses.len(),
        ckpt.display(),
        trace.display()
    );
    Ok(())
}

fn cmd_sample(cfg: &FileConfig, out: &Output) -> Result<(), CliError> {
    let sc = cfg.sample.as_ref().ok_or(ConfigError::Missing("sample"))?;
    let schedule = cfg.schedule()?.build()?;
    let steps = schedule.steps();
    let plan = match (&sc.timesteps, sc.sampler) {
        (_, SamplerKind::Ddpm) => StepPlan::full(steps)?,
        (Some(ts), _) => StepPlan::explicit(ts.clone())?,
        (None, _) => make_plan(steps, sc.steps.unwrap_or(steps), sc.plan_scheme)?,
    };
    let cutoff = match (sc.cutoff, sc.cutoff_time) {
        (Some(_), Some(_)) => return Err(skipstep::Error::Config("set sample.cutoff or sample.cutoff_time, not both".into()).into()),
        (Some(k), None) => Some(k),
        (None, Some(t)) => Some(plan.nearest_index(t)),
        (None, None) => None,
    };
    if cutoff.is_some() && sc.sampler != SamplerKind::Mixed {
        return Err(skipstep::Error::Config("sample.cutoff only applies to the mixed sampler".into()).into());
    }
    let mut scfg = SamplerConfig::new(sc.sampler, plan);
    scfg.cutoff = cutoff;
    scfg.variance = sc.variance;
    scfg.validate(&schedule)?;
    if sc.n == 0 {
        return Err(skipstep::Error::Config("sample.n must be >= 1".into()).into());
    }
    let denoiser = bench::prepare_denoiser(cfg.denoiser()?, cfg.data.as_ref(), &schedule)?;
    let d = denoiser.as_dyn();
    info!("sampling {} rows with {} ({} updates)", sc.n, sc.sampler, scfg.updates(&schedule)?.len());
    let x = samplers::sample(d, &schedule, &scfg, sc.n, &mut bench::sampling_rng(sc.seed))?;
    let path = out.path(&cfg.output.samples)?;
    write_samples(&path, &x)?;
    println!("wrote {} samples of dimension {} to {}", x.nrows(), x.ncols(), path.display());
    if sc.scatter {
        if d.dim() > 2 {
            log::warn!("scatter plot skipped: dimension {} > 2", d.dim());
        } else {
            let svg_path = path.with_extension("svg");
            let title = format!("{} samples", sc.sampler);
            let chart = svg::scatter(&title, &[(sc.sampler.name(), points(&x))]);
            std::fs::write(&svg_path, chart).map_err(|e| skipstep::Error::Io { path: svg_path.clone(), source: e })?;
            println!("scatter: {}", svg_path.display());
        }
    }
    Ok(())
}

fn points(x: &Batch) -> Vec<(f64, f64)> {
    x.rows().into_iter().map(|r| (r[0], if r.len() > 1 { r[1] } else { 0.0 })).collect()
}

fn cmd_bench(cfg: &FileConfig, out: &Output) -> Result<(), CliError> {
    let csv = out.path(&cfg.output.sweep)?;
    let exp = Experiment::prepare(cfg.experiment(csv.clone())?)?;
    info!("running {} sweep runs", exp.sweep_runs()?.len());
    let reports = exp.run_sweep()?;
    print!("{}", bench::summary_table(&reports));
    println!("csv: {}", csv.display());
    Ok(())
}

fn cmd_ablate(cfg: &FileConfig, out: &Output) -> Result<(), CliError> {
    let ab = cfg.ablation.as_ref().ok_or(ConfigError::Missing("ablation"))?;
    let csv = out.path(&cfg.output.ablation)?;
    let exp = Experiment::prepare(cfg.experiment(csv.clone())?)?;
    let k = make_plan(exp.schedule.steps(), ab.budget, exp.cfg.bench.plan_scheme)?.len();
    let grid = if ab.cutoffs.is_empty() { default_cutoff_grid(k, 7) } else { ab.cutoffs.clone() };
    info!("ablating cutoffs {grid:?} at K = {}", ab.budget);
    let reports = exp.run_cutoff_ablation(ab.budget, &grid)?;
    print!("{}", bench::summary_table(&reports));
    let metric = exp.cfg.bench.metrics.first().map(String::as_str).unwrap_or(names::SLICED_W);
    if let Some(best) = bench::best_cutoff(&reports, metric) {
        let t_c = reports.iter().find(|r| r.cutoff == Some(best)).and_then(|r| r.cutoff_time).unwrap_or(0);
        println!("best cutoff by {metric}: k_c = {best} (t_c = {t_c})");
    }
    println!("csv: {}\nsvg: {}", csv.display(), csv.with_extension("svg").display());
    Ok(())
}

fn cmd_verify(cfg: &FileConfig) -> Result<(), CliError> {
    let report = run_verification(&cfg.verify)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name).collect();
        Err(CliError::Verify(names.join(", ")))
    }
}
