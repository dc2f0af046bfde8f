//! Sampler × step-budget sweeps and the mixed-sampler cutoff ablation.
//!
//! Every run draws its samples, evaluates the configured metrics against a
//! fresh reference draw from the dataset and appends one CSV row. The CSV
//! header is fixed:
//!
//! ```text
//! sampler,steps,cutoff,cutoff_time,seed,nfe,status,sliced_w,energy,mmd,gaussian_w2,wall_clock_ms
//! ```
//!
//! - `steps` is the budget `K` requested; `nfe` counts denoiser calls
//!   (`T` for `ddpm`, which always runs the full chain).
//! - `cutoff` / `cutoff_time` are `k_c` / `t_c` for `mixed`, empty otherwise.
//! - `status` is `ok` or `failed` (a non-finite sample or metric).
//! - Metric columns not requested are empty. `gaussian_w2` is exact
//!   (affine propagation against the data law) under the Gaussian oracle and
//!   the moment-matched Gaussian approximation otherwise.
//! - `wall_clock_ms` times sampling only and is the one column that varies
//!   between identical reruns.
//!
//! Randomness is keyed by the run seed alone: all samplers and cutoffs with
//! the same seed share initial noise, per-step noise, reference set and
//! projection directions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DataKind, DatasetSpec};
use crate::denoiser::{read_checkpoint, train, Denoiser, GaussianOracle, MlpDenoiser, TrainConfig, TrainOutcome};
use crate::forward::RandomSource;
use crate::metrics::{self, names, MetricReport};
use crate::samplers::{self, make_plan, PlanScheme, SamplerConfig, SamplerKind, StepPlan, VarianceMode};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::svg;
use crate::{Batch, Error, Result};

pub const CSV_HEADER: [&str; 12] = [
    "sampler",
    "steps",
    "cutoff",
    "cutoff_time",
    "seed",
    "nfe",
    "status",
    "sliced_w",
    "energy",
    "mmd",
    "gaussian_w2",
    "wall_clock_ms",
];

/// Budgets on a `T = 1000` chain; rescaled to other `T`.
pub const DEFAULT_BUDGETS: [usize; 5] = [1000, 500, 100, 50, 25];

const SAMPLING_LABEL: u64 = 0x5a4d_504c;
const REFERENCE_LABEL: u64 = 0x5245_4653;
const METRIC_LABEL: u64 = 0x4d45_5452;
const INIT_LABEL: u64 = 0x494e_4954;

/// Where the denoiser comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSource {
    /// Closed-form optimum; requires `gaussian` data.
    Oracle,
    Checkpoint { path: PathBuf },
    /// Build and train an MLP before running.
    Train {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_time_dim")]
        time_dim: usize,
        train: TrainConfig,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_time_dim() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub budget: usize,
    /// `k_c` values; defaults to 7 evenly spaced indices over `[0, K]`.
    #[serde(default)]
    pub cutoffs: Vec<usize>,
}

/// Sweep settings shared by `run_sweep` and `run_cutoff_ablation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "default_samplers")]
    pub samplers: Vec<SamplerKind>,
    /// Empty means [`DEFAULT_BUDGETS`] scaled by `T / 1000`.
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default = "default_scheme")]
    pub plan_scheme: PlanScheme,
    /// `t_c` used by `mixed` in sweeps, mapped to the nearest plan index.
    /// Defaults to `0.3 T`.
    #[serde(default)]
    pub mixed_cutoff_time: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Rows per run, for both samples and the reference set.
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_projections")]
    pub projections: usize,
    #[serde(default = "default_bandwidth")]
    pub mmd_bandwidth: f64,
    #[serde(default)]
    pub variance: VarianceMode,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            samplers: default_samplers(),
            budgets: Vec::new(),
            plan_scheme: default_scheme(),
            mixed_cutoff_time: None,
            seeds: default_seeds(),
            n_samples: default_n_samples(),
            metrics: default_metrics(),
            projections: default_projections(),
            mmd_bandwidth: default_bandwidth(),
            variance: VarianceMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DatasetSpec,
    pub schedule: ScheduleSpec,
    pub denoiser: DenoiserSource,
    #[serde(default)]
    pub bench: BenchSettings,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    /// CSV destination; the ablation SVG goes next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Ddpm, SamplerKind::Ddim, SamplerKind::Skipped, SamplerKind::Mixed]
}
fn default_scheme() -> PlanScheme {
    PlanScheme::Uniform
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_n_samples() -> usize {
    2000
}
fn default_metrics() -> Vec<String> {
    names::ALL.iter().map(|s| s.to_string()).collect()
}
fn default_projections() -> usize {
    metrics::DEFAULT_PROJECTIONS
}
fn default_bandwidth() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(data: DatasetSpec, schedule: ScheduleSpec, denoiser: DenoiserSource) -> Self {
        Self { data, schedule, denoiser, bench: BenchSettings::default(), ablation: None, output: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let steps = self.schedule.steps();
        if self.bench.samplers.is_empty() {
            return Err(Error::config("bench.samplers must not be empty"));
        }
        if self.bench.seeds.is_empty() {
            return Err(Error::config("bench.seeds must not be empty"));
        }
        if self.bench.n_samples == 0 {
            return Err(Error::config("bench.n_samples must be >= 1"));
        }
        if let Some(&b) = self.bench.budgets.iter().find(|&&b| b == 0 || b > steps) {
            return Err(Error::config(format!("bench.budgets entry {b} outside [1, T = {steps}]")));
        }
        if let Some(m) = self.bench.metrics.iter().find(|m| !names::ALL.contains(&m.as_str())) {
            return Err(Error::config(format!("bench.unknown metric {m:?}; expected one of {:?}", names::ALL)));
        }
        if self.bench.plan_scheme == PlanScheme::Explicit {
            return Err(Error::config("bench.plan_scheme must be uniform or quadratic"));
        }
        if self.bench.projections == 0 {
            return Err(Error::config("bench.projections must be >= 1"));
        }
        if !(self.bench.mmd_bandwidth > 0.0 && self.bench.mmd_bandwidth.is_finite()) {
            return Err(Error::config("bench.mmd_bandwidth must be positive"));
        }
        if self.bench.mixed_cutoff_time.is_some_and(|t| t > steps) {
            return Err(Error::config(format!("bench.mixed_cutoff_time outside [0, T = {steps}]")));
        }
        if let Some(a) = &self.ablation {
            if a.budget == 0 || a.budget > steps {
                return Err(Error::config(format!("ablation.budget outside [1, T = {steps}]")));
            }
        }
        match &self.denoiser {
            DenoiserSource::Oracle if !matches!(self.data.kind, DataKind::Gaussian { .. }) => {
                Err(Error::config("the oracle denoiser needs gaussian data"))
            }
            DenoiserSource::Train { train, .. } => train.validate(),
            _ => Ok(()),
        }
    }

    /// The effective budget list.
    pub fn budgets(&self) -> Vec<usize> {
        if !self.bench.budgets.is_empty() {
            return self.bench.budgets.clone();
        }
        let steps = self.schedule.steps();
        let mut out: Vec<usize> =
            DEFAULT_BUDGETS.iter().map(|&b| ((b * steps) as f64 / 1000.0).round().max(1.0) as usize).collect();
        out.dedup();
        out
    }

    pub fn mixed_cutoff_time(&self) -> usize {
        self.bench.mixed_cutoff_time.unwrap_or_else(|| (0.3 * self.schedule.steps() as f64).round() as usize)
    }
}

/// `n` evenly spaced cutoff indices over `[0, budget]`, endpoints included.
pub fn default_cutoff_grid(budget: usize, n: usize) -> Vec<usize> {
    let n = n.max(2);
    let mut g: Vec<usize> =
        (0..n).map(|i| ((i * budget) as f64 / (n - 1) as f64).round() as usize).collect();
    g.dedup();
    g
}

/// A denoiser ready for sampling.
#[derive(Debug, Clone)]
pub enum PreparedDenoiser {
    Oracle(GaussianOracle),
    Mlp(MlpDenoiser),
}

impl PreparedDenoiser {
    pub fn as_dyn(&self) -> &dyn Denoiser {
        match self {
            PreparedDenoiser::Oracle(o) => o,
            PreparedDenoiser::Mlp(m) => m,
        }
    }
}

/// Builds a denoiser; `Train` runs training here. `data` is needed by the
/// oracle (its Gaussian parameters) and by `Train` (the training set).
pub fn prepare_denoiser(
    source: &DenoiserSource,
    data: Option<&DatasetSpec>,
    schedule: &NoiseSchedule,
) -> Result<PreparedDenoiser> {
    match source {
        DenoiserSource::Oracle => match data.map(|d| &d.kind) {
            Some(DataKind::Gaussian { mean, var }) => {
                Ok(PreparedDenoiser::Oracle(GaussianOracle::new(mean.clone(), var.clone(), schedule.clone())?))
            }
            _ => Err(Error::config("the oracle denoiser needs gaussian data")),
        },
        DenoiserSource::Checkpoint { path } => Ok(PreparedDenoiser::Mlp(read_checkpoint(path)?)),
        DenoiserSource::Train { hidden, time_dim, train: tc } => {
            let spec = data.ok_or_else(|| Error::config("training inline needs a data section"))?;
            let dataset = crate::data::generate(spec)?;
            let model = train_inline(dataset.view(), hidden, *time_dim, tc, schedule)?.model;
            Ok(PreparedDenoiser::Mlp(model))
        }
    }
}

/// Initializes an MLP with widths `[dim, hidden.., dim]` and trains it;
/// both initialization and training are keyed by `tc.seed`.
pub fn train_inline(
    data: ndarray::ArrayView2<'_, f64>,
    hidden: &[usize],
    time_dim: usize,
    tc: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<TrainOutcome> {
    let mut widths = vec![data.ncols()];
    widths.extend_from_slice(hidden);
    widths.push(data.ncols());
    let root = RandomSource::new(tc.seed);
    let model = MlpDenoiser::new(&widths, time_dim, schedule.steps(), &mut root.derive(INIT_LABEL))?;
    train(model, data, tc, schedule, &mut root.clone())
}

/// The sampling randomness of a run with `seed`.
pub fn sampling_rng(seed: u64) -> RandomSource {
    RandomSource::new(seed).derive(SAMPLING_LABEL)
}

/// A validated config with its schedule and denoiser.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub denoiser: PreparedDenoiser,
}

/// Which run to perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub kind: SamplerKind,
    pub budget: usize,
    pub cutoff: Option<usize>,
    pub seed: u64,
}

impl Experiment {
    pub fn prepare(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let denoiser = prepare_denoiser(&cfg.denoiser, Some(&cfg.data), &schedule)?;
        Self::with_denoiser(cfg, denoiser)
    }

    /// Uses an already-built denoiser instead of `cfg.denoiser`.
    pub fn with_denoiser(cfg: ExperimentConfig, denoiser: PreparedDenoiser) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let d = denoiser.as_dyn();
        if d.dim() != cfg.data.dim() || d.steps() != schedule.steps() {
            return Err(Error::config(format!(
                "denoiser (dim {}, T = {}) does not match data dim {} and T = {}",
                d.dim(),
                d.steps(),
                cfg.data.dim(),
                schedule.steps()
            )));
        }
        Ok(Self { cfg, schedule, denoiser })
    }

    fn plan(&self, budget: usize) -> Result<StepPlan> {
        make_plan(self.schedule.steps(), budget, self.cfg.bench.plan_scheme)
    }

    /// The run list of a sweep, in CSV order.
    pub fn sweep_runs(&self) -> Result<Vec<RunSpec>> {
        let mut runs = Vec::new();
        for &kind in &self.cfg.bench.samplers {
            for budget in self.cfg.budgets() {
                let cutoff = match kind {
                    SamplerKind::Mixed => Some(self.plan(budget)?.nearest_index(self.cfg.mixed_cutoff_time())),
                    _ => None,
                };
                for &seed in &self.cfg.bench.seeds {
                    runs.push(RunSpec { kind, budget, cutoff, seed });
                }
            }
        }
        Ok(runs)
    }

    /// Reference batch for `seed`.
    pub fn reference(&self, seed: u64) -> Result<Batch> {
        let mut rng = RandomSource::new(seed).derive(REFERENCE_LABEL);
        self.cfg.data.kind.sample(self.cfg.bench.n_samples, &mut rng)
    }

    fn sampler_config(&self, run: &RunSpec) -> Result<SamplerConfig> {
        let plan = self.plan(run.budget)?;
        let mut sc = SamplerConfig::new(run.kind, plan);
        sc.cutoff = run.cutoff;
        sc.variance = self.cfg.bench.variance;
        sc.validate(&self.schedule)?;
        Ok(sc)
    }

    /// Draws the samples of one run and the time spent, in milliseconds.
    pub fn generate(&self, run: &RunSpec) -> Result<(Batch, f64)> {
        let sc = self.sampler_config(run)?;
        let mut rng = sampling_rng(run.seed);
        let start = Instant::now();
        let x = samplers::sample(self.denoiser.as_dyn(), &self.schedule, &sc, self.cfg.bench.n_samples, &mut rng)?;
        Ok((x, start.elapsed().as_secs_f64() * 1e3))
    }

    /// Performs one run. Numerical failures mark the report failed.
    pub fn run(&self, run: &RunSpec, reference: &Batch) -> Result<MetricReport> {
        let sc = self.sampler_config(run)?;
        let nfe = match run.kind {
            SamplerKind::Ddpm => self.schedule.steps(),
            _ => sc.plan.len(),
        };
        let mut report = MetricReport {
            sampler: run.kind,
            steps: run.budget,
            cutoff: run.cutoff,
            cutoff_time: sc.cutoff_time(),
            seed: run.seed,
            nfe,
            metrics: Default::default(),
            wall_clock_ms: f64::NAN,
            failed: false,
        };
        let x = match self.generate(run) {
            Ok((x, ms)) => {
                report.wall_clock_ms = ms;
                x
            }
            Err(Error::Numerical(_)) => {
                report.failed = true;
                return Ok(report);
            }
            Err(e) => return Err(e),
        };
        if x.iter().any(|v| !v.is_finite()) {
            report.failed = true;
            return Ok(report);
        }
        let mut rng = RandomSource::new(run.seed).derive(METRIC_LABEL);
        for name in &self.cfg.bench.metrics {
            let v = match name.as_str() {
                names::SLICED_W => metrics::sliced_wasserstein(x.view(), reference.view(), self.cfg.bench.projections, &mut rng)?,
                names::ENERGY => metrics::energy_distance(x.view(), reference.view())?,
                names::MMD => metrics::mmd_rbf(x.view(), reference.view(), self.cfg.bench.mmd_bandwidth)?,
                names::GAUSSIAN_W2 => match &self.denoiser {
                    PreparedDenoiser::Oracle(o) => {
                        let out = samplers::propagate_affine(o, &self.schedule, &sc)?;
                        metrics::gaussian_w2(&out, &o.data_state())?
                    }
                    PreparedDenoiser::Mlp(_) => metrics::gaussian_w2(
                        &metrics::batch_moments(x.view())?,
                        &metrics::batch_moments(reference.view())?,
                    )?,
                },
                other => return Err(Error::config(format!("bench.unknown metric {other:?}"))),
            };
            report.failed |= !v.is_finite();
            report.metrics.insert(name.clone(), v);
        }
        Ok(report)
    }

    fn run_all(&self, runs: &[RunSpec], sink: &mut Option<CsvSink>) -> Result<Vec<MetricReport>> {
        let mut refs: Vec<(u64, Batch)> = Vec::new();
        let mut out = Vec::with_capacity(runs.len());
        for run in runs {
            if !refs.iter().any(|(s, _)| *s == run.seed) {
                refs.push((run.seed, self.reference(run.seed)?));
            }
            let reference = &refs.iter().find(|(s, _)| *s == run.seed).expect("inserted").1;
            let report = self.run(run, reference)?;
            if let Some(sink) = sink {
                sink.write(&report)?;
            }
            out.push(report);
        }
        Ok(out)
    }

    /// Runs every `(sampler, budget, seed)` triple, appending to
    /// `cfg.output` as it goes.
    pub fn run_sweep(&self) -> Result<Vec<MetricReport>> {
        let runs = self.sweep_runs()?;
        let mut sink = self.cfg.output.as_deref().map(CsvSink::create).transpose()?;
        self.run_all(&runs, &mut sink)
    }

    /// Runs `mixed` at `budget` for each `k_c` in `cutoffs` and each seed.
    /// With `cfg.output` set, also writes a cutoff-vs-metric SVG next to
    /// the CSV.
    pub fn run_cutoff_ablation(&self, budget: usize, cutoffs: &[usize]) -> Result<Vec<MetricReport>> {
        let plan = self.plan(budget)?;
        if cutoffs.is_empty() {
            return Err(Error::config("cutoff grid must not be empty"));
        }
        if let Some(&k) = cutoffs.iter().find(|&&k| k > plan.len()) {
            return Err(Error::config(format!("cutoff k_c = {k} outside [0, K = {}]", plan.len())));
        }
        let runs: Vec<RunSpec> = cutoffs
            .iter()
            .flat_map(|&k| {
                self.cfg.bench.seeds.iter().map(move |&seed| RunSpec { kind: SamplerKind::Mixed, budget, cutoff: Some(k), seed })
            })
            .collect();
        let mut sink = self.cfg.output.as_deref().map(CsvSink::create).transpose()?;
        let reports = self.run_all(&runs, &mut sink)?;
        if let Some(path) = &self.cfg.output {
            let svg_path = path.with_extension("svg");
            let chart = ablation_chart(&reports, &self.cfg.bench.metrics, budget);
            std::fs::write(&svg_path, chart).map_err(|e| Error::io(&svg_path, e))?;
        }
        Ok(reports)
    }
}

/// Prepares the experiment and runs the sweep.
pub fn run_sweep(cfg: ExperimentConfig) -> Result<Vec<MetricReport>> {
    Experiment::prepare(cfg)?.run_sweep()
}

/// Prepares the experiment and runs the cutoff ablation.
pub fn run_cutoff_ablation(cfg: ExperimentConfig, budget: usize, cutoffs: &[usize]) -> Result<Vec<MetricReport>> {
    Experiment::prepare(cfg)?.run_cutoff_ablation(budget, cutoffs)
}

/// Incremental CSV writer; flushes after every row.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(CSV_HEADER)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_owned(), writer })
    }

    pub fn write(&mut self, r: &MetricReport) -> Result<()> {
        self.writer.write_record(csv_record(r))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One CSV row for `r`, matching [`CSV_HEADER`].
pub fn csv_record(r: &MetricReport) -> Vec<String> {
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut row = vec![
        r.sampler.name().to_string(),
        r.steps.to_string(),
        opt(r.cutoff),
        opt(r.cutoff_time),
        r.seed.to_string(),
        r.nfe.to_string(),
        if r.failed { "failed" } else { "ok" }.to_string(),
    ];
    for name in names::ALL {
        row.push(r.get(name).map(|v| v.to_string()).unwrap_or_default());
    }
    row.push(if r.wall_clock_ms.is_finite() { format!("{:.3}", r.wall_clock_ms) } else { String::new() });
    row
}

/// Checks one parsed CSV record against the schema.
pub fn validate_csv_record(rec: &csv::StringRecord) -> std::result::Result<(), String> {
    if rec.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len()));
    }
    let sampler = &rec[0];
    if !SamplerKind::ALL.iter().any(|k| k.name() == sampler) {
        return Err(format!("unknown sampler {sampler:?}"));
    }
    let uint = |i: usize, allow_empty: bool| -> std::result::Result<(), String> {
        let f = &rec[i];
        if (allow_empty && f.is_empty()) || f.parse::<u64>().is_ok() {
            Ok(())
        } else {
            Err(format!("{}: {f:?} is not an unsigned integer", CSV_HEADER[i]))
        }
    };
    uint(1, false)?;
    let mixed = sampler == "mixed";
    if mixed == rec[2].is_empty() || mixed == rec[3].is_empty() {
        return Err("cutoff columns must be set exactly for mixed rows".into());
    }
    uint(2, true)?;
    uint(3, true)?;
    uint(4, false)?;
    uint(5, false)?;
    let failed = match &rec[6] {
        "ok" => false,
        "failed" => true,
        s => return Err(format!("status {s:?}")),
    };
    for i in 7..12 {
        let f = &rec[i];
        if f.is_empty() {
            continue;
        }
        let v: f64 = f.parse().map_err(|_| format!("{}: {f:?} is not a number", CSV_HEADER[i]))?;
        if !failed && !(v.is_finite() && v >= 0.0) {
            return Err(format!("{}: {v} in an ok row", CSV_HEADER[i]));
        }
    }
    Ok(())
}

/// Mean and standard deviation over seeds of each metric, one line per
/// `(sampler, steps, cutoff)` group, in first-seen order.
pub fn summary_table(reports: &[MetricReport]) -> String {
    type Key = (SamplerKind, usize, Option<usize>);
    let mut groups: Vec<(Key, Vec<&MetricReport>)> = Vec::new();
    for r in reports {
        let key = (r.sampler, r.steps, r.cutoff);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let present: Vec<&str> = names::ALL.into_iter().filter(|n| reports.iter().any(|r| r.get(n).is_some())).collect();
    let mut s = format!("{:<13}{:>6}{:>7}{:>6}{:>7}", "sampler", "steps", "k_c", "nfe", "runs");
    for n in &present {
        let _ = write!(s, "{:>24}", n);
    }
    s.push('\n');
    for ((kind, steps, cutoff), rs) in groups {
        let failed = rs.iter().filter(|r| r.failed).count();
        let runs = if failed > 0 { format!("{}!{}", rs.len(), failed) } else { rs.len().to_string() };
        let k_c = cutoff.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        let _ = write!(s, "{:<13}{:>6}{:>7}{:>6}{:>7}", kind.name(), steps, k_c, rs[0].nfe, runs);
        for n in &present {
            let vals: Vec<f64> = rs.iter().filter_map(|r| r.get(n)).filter(|v| v.is_finite()).collect();
            let (m, sd) = mean_sd(&vals);
            let _ = write!(s, "{:>24}", format!("{m:.5} ± {sd:.5}"));
        }
        s.push('\n');
    }
    s
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Mean over seeds of `metric` per cutoff index, sorted by `k_c`.
pub fn cutoff_curve(reports: &[MetricReport], metric: &str) -> Vec<(usize, f64)> {
    let mut ks: Vec<usize> = reports.iter().filter_map(|r| r.cutoff).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let vals: Vec<f64> =
                reports.iter().filter(|r| r.cutoff == Some(k)).filter_map(|r| r.get(metric)).collect();
            (k, mean_sd(&vals).0)
        })
        .collect()
}

/// Cutoff index with the lowest mean `metric`; ties go to the smaller `k_c`.
pub fn best_cutoff(reports: &[MetricReport], metric: &str) -> Option<usize> {
    cutoff_curve(reports, metric)
        .into_iter()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((k, v)),
        })
        .map(|(k, _)| k)
}

fn ablation_chart(reports: &[MetricReport], metrics: &[String], budget: usize) -> String {
    let series: Vec<(&str, Vec<(f64, f64)>)> = metrics
        .iter()
        .map(|m| (m.as_str(), cutoff_curve(reports, m).into_iter().map(|(k, v)| (k as f64, v)).collect()))
        .collect();
    svg::line_chart(&format!("mixed sampler, K = {budget}: metric vs cutoff"), "cutoff index k_c", "metric (mean over seeds)", &series)
}
