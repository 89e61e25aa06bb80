//! Experiment configuration: one TOML document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcgid::dataset::SplitMode;
use mcgid::denoise::{CancelSpec, FilterSpec};
use mcgid::nn::{LrSchedule, ModelSpec, TrainConfig};
use mcgid::robustness::{NoiseGridSpec, SnrMapping, DEFAULT_TARGETS};
use mcgid::siggen::{GridSpec, NoiseSpec, SessionSpec, SubjectProfile};
use mcgid::tfr::ScalogramSpec;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Root of every random stream in the run.
    pub seed: u64,
    pub siggen: SiggenConfig,
    pub denoise: DenoiseConfig,
    pub tfr: TfrConfig,
    pub dataset: DatasetConfig,
    pub nn: NnConfig,
    pub eval: EvalConfig,
    pub robustness: RobustnessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs/default"),
            seed: 1,
            siggen: SiggenConfig::default(),
            denoise: DenoiseConfig::default(),
            tfr: TfrConfig::default(),
            dataset: DatasetConfig::default(),
            nn: NnConfig::default(),
            eval: EvalConfig::default(),
            robustness: RobustnessConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiggenConfig {
    pub subjects: usize,
    /// Ambient field per recording environment, nT.
    pub env_fields: Vec<f64>,
    /// Recordings per (subject, environment, grid cell).
    pub segments: usize,
    pub rate: f64,
    /// Seconds per recording.
    pub duration: f64,
    pub grid: GridSpec,
    pub noise: NoiseSpec,
}

impl Default for SiggenConfig {
    fn default() -> Self {
        SiggenConfig {
            subjects: 5,
            env_fields: vec![8_000.0, 47_000.0],
            segments: 4,
            rate: 500.0,
            duration: 3.0,
            grid: GridSpec::default(),
            noise: NoiseSpec::default(),
        }
    }
}

impl SiggenConfig {
    pub fn profiles(&self) -> Vec<SubjectProfile> {
        SubjectProfile::cohort(self.subjects)
    }

    pub fn session(&self) -> SessionSpec {
        SessionSpec {
            grid: self.grid.clone(),
            env_fields: self.env_fields.clone(),
            segments_per_cell: self.segments,
            rate: self.rate,
            duration: self.duration,
            noise: self.noise.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    pub filter: FilterSpec,
    pub cancel: CancelSpec,
    /// Welch segment length for the PSD tables, samples.
    pub psd_segment: usize,
    /// Drop the low-pass filter's padding-dependent samples from both ends.
    pub trim_transients: bool,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig { filter: FilterSpec::default(), cancel: CancelSpec::default(), psd_segment: 512, trim_transients: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    /// Divide every matrix by the largest value over the whole run.
    #[default]
    GlobalMax,
    PerMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfrConfig {
    pub size: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub normalize: Normalization,
    /// Cascade refinement levels for the sampled mother wavelet.
    pub cascade_iters: u32,
}

impl Default for TfrConfig {
    fn default() -> Self {
        let s = ScalogramSpec::default();
        TfrConfig { size: s.size, f_min: s.f_min, f_max: s.f_max, normalize: Normalization::default(), cascade_iters: 8 }
    }
}

impl TfrConfig {
    pub fn spec(&self) -> ScalogramSpec {
        ScalogramSpec { size: self.size, f_min: self.f_min, f_max: self.f_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Training samples; 0 means use `train_fraction`.
    pub train_count: usize,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { train_count: 0, train_fraction: 0.8, split_mode: SplitMode::Sample }
    }
}

impl DatasetConfig {
    pub fn train_count_for(&self, total: usize) -> usize {
        if self.train_count > 0 {
            self.train_count
        } else {
            (self.train_fraction * total as f64).round() as usize
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub growth: usize,
    pub block_layers: [usize; 3],
    pub bottleneck: usize,
    pub se_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ModelSpec::default();
        ModelConfig {
            stem_channels: s.stem_channels,
            growth: s.growth,
            block_layers: s.block_layers,
            bottleneck: s.bottleneck,
            se_reduction: s.se_reduction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub normalize_input: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            weight_decay: t.weight_decay,
            lr_schedule: t.lr_schedule,
            normalize_input: t.normalize_input,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Evenly spaced thresholds in [0, 1] for the sensitivity/specificity table.
    pub thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { thresholds: 101 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub gaussian_intensities: Vec<f64>,
    pub random_intensities: Vec<f64>,
    pub mapping: SnrMapping,
    pub targets: Vec<f64>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        let g = NoiseGridSpec::default();
        RobustnessConfig {
            gaussian_intensities: g.gaussian_intensities,
            random_intensities: g.random_intensities,
            mapping: g.mapping,
            targets: DEFAULT_TARGETS.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.nn.model;
        ModelSpec {
            in_channels: mcgid::dataset::CHANNELS,
            input_size: self.tfr.size,
            stem_channels: m.stem_channels,
            growth: m.growth,
            block_layers: m.block_layers,
            bottleneck: m.bottleneck,
            se_reduction: m.se_reduction,
            n_classes: self.siggen.subjects,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.nn.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed,
            weight_decay: t.weight_decay,
            lr_schedule: t.lr_schedule.clone(),
            normalize_input: t.normalize_input,
            ..TrainConfig::default()
        }
    }

    pub fn noise_grid(&self, seed: u64) -> NoiseGridSpec {
        let r = &self.robustness;
        NoiseGridSpec {
            gaussian_intensities: r.gaussian_intensities.clone(),
            random_intensities: r.random_intensities.clone(),
            seed,
            mapping: r.mapping,
        }
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::config("seed", format!("must fit in a signed 64-bit integer, got {}", self.seed)));
        }
        let s = &self.siggen;
        if s.subjects < 2 {
            return Err(CliError::config("siggen.subjects", format!("need at least 2 subjects, got {}", s.subjects)));
        }
        if s.env_fields.is_empty() {
            return Err(CliError::config("siggen.env_fields", "must not be empty"));
        }
        if let Some(v) = s.env_fields.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::config("siggen.env_fields", format!("fields must be finite and >= 0 nT, got {v}")));
        }
        if s.segments == 0 {
            return Err(CliError::config("siggen.segments", "must be >= 1"));
        }
        if !(s.rate > 0.0 && s.rate.is_finite()) {
            return Err(CliError::config("siggen.rate", format!("must be > 0, got {}", s.rate)));
        }
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return Err(CliError::config("siggen.duration", format!("must be > 0, got {}", s.duration)));
        }
        section("siggen", s.grid.validate())?;
        section("siggen", s.noise.validate())?;
        for p in s.profiles() {
            section("siggen", p.validate())?;
        }

        section("denoise", self.denoise.filter.validate(s.rate))?;
        section("denoise", self.denoise.cancel.validate())?;
        if self.denoise.psd_segment < 2 {
            return Err(CliError::config("denoise.psd_segment", "must be >= 2"));
        }

        section("tfr", self.tfr.spec().validate(s.rate))?;
        if self.tfr.cascade_iters == 0 || self.tfr.cascade_iters > 14 {
            return Err(CliError::config("tfr.cascade_iters", format!("must lie in 1..=14, got {}", self.tfr.cascade_iters)));
        }

        let d = &self.dataset;
        if d.train_count == 0 && !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(CliError::config("dataset.train_fraction", format!("must lie in (0, 1), got {}", d.train_fraction)));
        }
        let total = self.expected_samples();
        let train = d.train_count_for(total);
        if train == 0 || train >= total {
            return Err(CliError::config(
                "dataset.train_count",
                format!("{train} training samples leaves no test set out of {total}"),
            ));
        }

        if self.tfr.size % 4 != 0 {
            return Err(CliError::config("tfr.size", format!("the classifier needs a multiple of 4, got {}", self.tfr.size)));
        }
        section("nn", self.model_spec().validate())?;
        section("nn", self.train_config(0).validate())?;
        if self.nn.train.epochs == 0 {
            return Err(CliError::config("nn.train.epochs", "must be >= 1"));
        }

        if self.eval.thresholds < 2 {
            return Err(CliError::config("eval.thresholds", format!("must be >= 2, got {}", self.eval.thresholds)));
        }

        section("", self.noise_grid(0).validate())?;
        if let Some(t) = self.robustness.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::config("robustness.targets", format!("accuracy targets must lie in [0, 1], got {t}")));
        }
        Ok(())
    }

    /// Samples produced by the window scan for this configuration.
    pub fn expected_samples(&self) -> usize {
        let s = &self.siggen;
        let windows = s.grid.rows.saturating_sub(1) * s.grid.cols.saturating_sub(1);
        s.subjects * s.env_fields.len() * s.segments * windows
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn section(prefix: &str, r: mcgid::Result<()>) -> Result<()> {
    match r {
        Ok(()) => Ok(()),
        Err(mcgid::Error::InvalidParameter { field, reason }) => {
            let field = if prefix.is_empty() || field.starts_with(&format!("{prefix}.")) {
                field.to_string()
            } else {
                format!("{prefix}.{field}")
            };
            Err(CliError::Config { field, reason })
        }
        Err(e) => Err(e.into()),
    }
}

/// Parses a config document, applies `key=value` overrides and validates.
pub fn parse(text: &str, origin: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let file: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;
    let defaults = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
    check_known(&file, &defaults, "")?;
    let cfg: ExperimentConfig = toml::Value::Table(file)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Parse { path: origin.to_path_buf(), reason: e.to_string() })?;
    let cfg = apply_overrides(&cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse(&text, path, overrides)
}

fn check_known(table: &toml::Table, known: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => return Err(CliError::config(path, "unknown key")),
            (toml::Value::Table(t), Some(toml::Value::Table(kt))) if !is_tagged(kt) => check_known(t, kt, &path)?,
            _ => {}
        }
    }
    Ok(())
}

/// Internally tagged enums change their key set with the tag, so their
/// contents are checked by deserialization instead.
fn is_tagged(t: &toml::Table) -> bool {
    t.contains_key("kind")
}

/// Applies dotted-path overrides such as `tfr.size=48` or
/// `siggen.env_fields=[8000, 20000]`. Values parse as TOML, falling back to a
/// bare string.
pub fn apply_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = toml::Table::try_from(cfg).expect("config serializes");
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::config(o.clone(), "override must look like section.key=value"))?;
        let path = path.trim();
        let value = parse_value(raw.trim());
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::config(path, "empty key"))?;
        let mut table = &mut root;
        for k in keys {
            table = match table.get_mut(k) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(CliError::config(path, "unknown key")),
            };
        }
        match table.get_mut(last) {
            Some(slot) => *slot = value,
            None => return Err(CliError::config(path, "unknown key")),
        }
    }
    toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(overrides.join(" "), e.message().to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
