//! Stage graph, manifests and the run loop.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use mcgid::rng;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::{hash_file, hash_json, StageManifest};
use crate::stages;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Denoise,
    Tfr,
    Dataset,
    Train,
    Eval,
    Sweep,
    Report,
}

pub mod artifact {
    pub const RECORDINGS: &str = "recordings.bin";
    pub const DENOISED: &str = "denoised.bin";
    pub const DENOISE_BLOCKS: &str = "denoise_blocks.csv";
    pub const PSD_RAW: &str = "psd_raw.csv";
    pub const PSD_DENOISED: &str = "psd_denoised.csv";
    pub const DENOISE_SUMMARY: &str = "denoise.json";
    pub const SCALOGRAMS: &str = "scalograms.bin";
    pub const FREQUENCIES: &str = "frequencies.csv";
    pub const DATASET: &str = "dataset.bin";
    pub const TRAIN: &str = "train.bin";
    pub const TEST: &str = "test.bin";
    pub const DATASET_INFO: &str = "dataset.txt";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const HISTORY: &str = "history.csv";
    pub const CONFUSION_CSV: &str = "confusion.csv";
    pub const CONFUSION_TXT: &str = "confusion.txt";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const METRICS_TXT: &str = "metrics.txt";
    pub const SENSITIVITY: &str = "sensitivity.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const EVAL_SUMMARY: &str = "eval.json";
    pub const SURFACE: &str = "surface.csv";
    pub const CONTOURS: &str = "contours.csv";
    pub const SWEEP_SUMMARY: &str = "sweep.json";
    pub const REPORT: &str = "report.txt";
    pub const SUMMARY: &str = "summary.json";
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Gen, Stage::Denoise, Stage::Tfr, Stage::Dataset, Stage::Train, Stage::Eval, Stage::Sweep, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Denoise => "denoise",
            Stage::Tfr => "tfr",
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Upstream artifacts and the stage that writes each.
    pub fn inputs(self) -> &'static [(&'static str, Stage)] {
        use artifact::*;
        match self {
            Stage::Gen => &[],
            Stage::Denoise => &[(RECORDINGS, Stage::Gen)],
            Stage::Tfr => &[(DENOISED, Stage::Denoise)],
            Stage::Dataset => &[(SCALOGRAMS, Stage::Tfr)],
            Stage::Train => &[(TRAIN, Stage::Dataset)],
            Stage::Eval | Stage::Sweep => &[(TEST, Stage::Dataset), (CHECKPOINT, Stage::Train)],
            Stage::Report => &[
                (DENOISE_SUMMARY, Stage::Denoise),
                (DATASET_INFO, Stage::Dataset),
                (HISTORY, Stage::Train),
                (EVAL_SUMMARY, Stage::Eval),
                (SWEEP_SUMMARY, Stage::Sweep),
            ],
        }
    }

    /// Seed forked from the root seed, for stages that draw random numbers.
    pub fn seed(self, root: u64) -> Option<u64> {
        match self {
            Stage::Gen | Stage::Dataset | Stage::Train | Stage::Sweep => Some(rng::fork_tag(root, self.name())),
            _ => None,
        }
    }

    /// Hash of the configuration this stage reads.
    pub fn config_hash(self, cfg: &ExperimentConfig) -> String {
        #[derive(Serialize)]
        struct Keyed<'a, T: Serialize> {
            stage: &'a str,
            value: T,
        }
        let stage = self.name();
        match self {
            Stage::Gen => hash_json(&Keyed { stage, value: &cfg.siggen }),
            Stage::Denoise => hash_json(&Keyed { stage, value: &cfg.denoise }),
            Stage::Tfr => hash_json(&Keyed { stage, value: &cfg.tfr }),
            Stage::Dataset => hash_json(&Keyed { stage, value: &cfg.dataset }),
            Stage::Train => hash_json(&Keyed { stage, value: (cfg.model_spec(), cfg.train_config(0)) }),
            Stage::Eval => hash_json(&Keyed { stage, value: (cfg.model_spec(), &cfg.eval) }),
            Stage::Sweep => hash_json(&Keyed { stage, value: (cfg.model_spec(), &cfg.robustness) }),
            Stage::Report => hash_json(&Keyed { stage, value: &cfg.robustness.targets }),
        }
    }
}

/// What to run: one stage or the whole chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Stage(Stage),
    All,
}

impl Target {
    pub fn parse(name: &str) -> Option<Target> {
        if name == "all" {
            Some(Target::All)
        } else {
            Stage::from_name(name).map(Target::Stage)
        }
    }

    fn stages(self) -> Vec<Stage> {
        match self {
            Target::All => Stage::ALL.to_vec(),
            Target::Stage(s) => vec![s],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    /// Manifest unchanged; nothing was written.
    UpToDate,
}

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: &'a Path,
    pub seed: u64,
}

impl Context<'_> {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

pub fn run(cfg: &ExperimentConfig, target: Target, opts: &RunOptions) -> Result<Vec<(Stage, Outcome)>> {
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::config("jobs", e.to_string()))?;
    pool.install(|| {
        std::fs::create_dir_all(&cfg.output_dir)?;
        let mut done = Vec::new();
        for stage in target.stages() {
            let outcome = run_stage(cfg, stage, opts.force)
                .map_err(|e| CliError::Stage { stage: stage.name(), source: Box::new(e) })?;
            done.push((stage, outcome));
        }
        Ok(done)
    })
}

fn run_stage(cfg: &ExperimentConfig, stage: Stage, force: bool) -> Result<Outcome> {
    let dir = cfg.output_dir.as_path();
    let mut inputs = BTreeMap::new();
    for &(name, producer) in stage.inputs() {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(CliError::MissingArtifact { stage: producer.name(), path });
        }
        inputs.insert(name.to_string(), hash_file(&path)?);
    }
    let config_hash = stage.config_hash(cfg);
    let seed = stage.seed(cfg.seed);
    if !force {
        if let Some(m) = StageManifest::read(dir, stage.name()) {
            if m.satisfies(stage.name(), &config_hash, seed, &inputs, dir) {
                log::info!("{}: up to date", stage.name());
                return Ok(Outcome::UpToDate);
            }
        }
    }

    let started = Instant::now();
    let ctx = Context { cfg, dir, seed: seed.unwrap_or(0) };
    let written = match stage {
        Stage::Gen => stages::gen(&ctx)?,
        Stage::Denoise => stages::denoise(&ctx)?,
        Stage::Tfr => stages::tfr(&ctx)?,
        Stage::Dataset => stages::dataset(&ctx)?,
        Stage::Train => stages::train(&ctx)?,
        Stage::Eval => stages::eval(&ctx)?,
        Stage::Sweep => stages::sweep(&ctx)?,
        Stage::Report => crate::report::report(&ctx)?,
    };
    let mut outputs = BTreeMap::new();
    for name in written {
        outputs.insert(name.to_string(), hash_file(&dir.join(name))?);
    }
    StageManifest { stage: stage.name().to_string(), config_hash, seed, inputs, outputs }.write(dir)?;
    log::info!("{}: done in {:.1} s", stage.name(), started.elapsed().as_secs_f64());
    Ok(Outcome::Ran)
}
