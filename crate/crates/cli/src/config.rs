//! The CLI config file: one TOML document whose sections each subcommand
//! reads as needed. See `configs/example.toml` for every key.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use skipstep::bench::{AblationConfig, BenchSettings, DenoiserSource, ExperimentConfig};
use skipstep::data::DatasetSpec;
use skipstep::denoiser::TrainConfig;
use skipstep::samplers::{PlanScheme, SamplerKind, VarianceMode};
use skipstep::schedule::ScheduleSpec;
use skipstep::verify::VerifyConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("bad override {0:?}: {1}")]
    Override(String, String),
    #[error("config is missing the [{0}] section")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schedule: Option<ScheduleSpec>,
    pub data: Option<DatasetSpec>,
    #[serde(default)]
    pub model: ModelSpec,
    pub train: Option<TrainConfig>,
    pub denoiser: Option<DenoiserSource>,
    pub sample: Option<SampleSection>,
    #[serde(default)]
    pub bench: BenchSettings,
    pub ablation: Option<AblationConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputNames,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_time_dim() -> usize {
    32
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: default_hidden(), time_dim: default_time_dim() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub sampler: SamplerKind,
    /// Step budget `K`; defaults to `T`. Ignored by `ddpm`.
    pub steps: Option<usize>,
    #[serde(default = "default_scheme")]
    pub plan_scheme: PlanScheme,
    /// Explicit timesteps, overriding `steps` and `plan_scheme`.
    pub timesteps: Option<Vec<usize>>,
    /// `k_c` for `mixed`.
    pub cutoff: Option<usize>,
    /// `t_c` for `mixed`, mapped to the nearest plan index.
    pub cutoff_time: Option<usize>,
    #[serde(default)]
    pub variance: VarianceMode,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also write a scatter SVG (dimension 1 or 2 only).
    #[serde(default)]
    pub scatter: bool,
}

fn default_scheme() -> PlanScheme {
    PlanScheme::Uniform
}

/// File names written under the output directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputNames {
    #[serde(default = "n_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default = "n_loss")]
    pub loss_trace: PathBuf,
    #[serde(default = "n_samples")]
    pub samples: PathBuf,
    #[serde(default = "n_sweep")]
    pub sweep: PathBuf,
    #[serde(default = "n_ablation")]
    pub ablation: PathBuf,
}

fn n_checkpoint() -> PathBuf {
    "model.ckpt".into()
}
fn n_loss() -> PathBuf {
    "loss.csv".into()
}
fn n_samples() -> PathBuf {
    "samples.csv".into()
}
fn n_sweep() -> PathBuf {
    "sweep.csv".into()
}
fn n_ablation() -> PathBuf {
    "ablation.csv".into()
}

impl Default for OutputNames {
    fn default() -> Self {
        Self {
            checkpoint: n_checkpoint(),
            loss_trace: n_loss(),
            samples: n_samples(),
            sweep: n_sweep(),
            ablation: n_ablation(),
        }
    }
}

impl FileConfig {
    pub fn schedule(&self) -> Result<&ScheduleSpec, ConfigError> {
        self.schedule.as_ref().ok_or(ConfigError::Missing("schedule"))
    }

    pub fn data(&self) -> Result<&DatasetSpec, ConfigError> {
        self.data.as_ref().ok_or(ConfigError::Missing("data"))
    }

    pub fn denoiser(&self) -> Result<&DenoiserSource, ConfigError> {
        self.denoiser.as_ref().ok_or(ConfigError::Missing("denoiser"))
    }

    /// The experiment described by the `schedule`, `data`, `denoiser`,
    /// `bench` and `ablation` sections, writing its CSV to `output`.
    pub fn experiment(&self, output: PathBuf) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::new(self.data()?.clone(), self.schedule()?.clone(), self.denoiser()?.clone());
        cfg.bench = self.bench.clone();
        cfg.ablation = self.ablation.clone();
        cfg.output = Some(output);
        Ok(cfg)
    }
}

/// Reads `path` (or starts from an empty document), applies `overrides`
/// and deserializes, naming the offending field on failure.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<FileConfig, ConfigError> {
    let (mut table, origin) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read { path: p.to_owned(), source: e })?;
            let table: toml::Table =
                text.parse().map_err(|e: toml::de::Error| ConfigError::Parse { origin: p.display().to_string(), message: e.to_string() })?;
            (table, p.display().to_string())
        }
        None => (toml::Table::new(), "<defaults>".to_string()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let de = toml::Value::Table(table);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner().to_string();
        let reason = inner.lines().next().unwrap_or_default().to_string();
        ConfigError::Parse { origin, message: format!("field `{field}`: {reason}") }
    })
}

/// Sets `a.b.c = value`, parsing `value` as a TOML value and falling back
/// to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let bad = |m: &str| ConfigError::Override(spec.to_string(), m.to_string());
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| bad(&format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "train.learning_rate=0.5").unwrap();
        apply_override(&mut t, "bench.seeds = [1, 2]").unwrap();
        apply_override(&mut t, "data.kind=two_moons").unwrap();
        assert_eq!(t["train"]["learning_rate"].as_float(), Some(0.5));
        assert_eq!(t["bench"]["seeds"].as_array().unwrap().len(), 2);
        assert_eq!(t["data"]["kind"].as_str(), Some("two_moons"));
        assert!(apply_override(&mut t, "noequals").is_err());
        assert!(apply_override(&mut t, "data.kind.x=1").is_err());
    }

    #[test]
    fn errors_name_the_field() {
        let err = load(None, &["train.steps=10".into(), "train.loss=\"fancy\"".into()]).unwrap_err();
        assert!(err.to_string().contains("train.loss"), "{err}");
    }

    #[test]
    fn example_config_parses() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
        let cfg = load(Some(&p), &[]).unwrap();
        assert!(cfg.schedule.is_some() && cfg.sample.is_some() && cfg.train.is_some());
        cfg.experiment("x.csv".into()).unwrap().validate().unwrap();
    }
}
