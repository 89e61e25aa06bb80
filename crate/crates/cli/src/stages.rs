//! Stage bodies. Each reads its inputs from the output directory and
//! returns the names of the artifacts it wrote.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mcgid::archive;
use mcgid::dataset::{self, Dataset, Manifest};
use mcgid::denoise::{self, BlockStatus};
use mcgid::eval::{self, ConfusionMatrix, MetricReport, SweepPoint};
use mcgid::nn::{self, Model};
use mcgid::robustness::{self, AccuracySurface, Contour};
use mcgid::siggen::{self, Recording};
use mcgid::tfr::{self, NormalizeMode, ScalogramPlan, TfMatrix};

use crate::config::Normalization;
use crate::error::Result;
use crate::pipeline::{artifact::*, Context};

const BAND: (f64, f64) = (49.0, 51.0);

pub fn gen(ctx: &Context) -> Result<Vec<&'static str>> {
    let s = &ctx.cfg.siggen;
    let recs = siggen::generate_session(&s.profiles(), &s.session(), ctx.seed)?;
    log::info!("gen: {} recordings of {} samples", recs.len(), recs.first().map_or(0, |r| r.samples.len()));
    archive::save_recordings(&recs, &ctx.path(RECORDINGS))?;
    Ok(vec![RECORDINGS])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSummary {
    pub recordings: usize,
    pub blocks: usize,
    pub fitted_blocks: usize,
    /// Mean PSD power in 49-51 Hz before and after, pT^2.
    pub band_power_raw: f64,
    pub band_power_denoised: f64,
    pub band_reduction_db: f64,
}

fn mean_psd(recs: &[Recording], segment: usize) -> Result<Vec<(f64, f64)>> {
    let spectra = recs
        .par_iter()
        .map(|r| {
            let seg = segment.min(r.samples.len());
            denoise::psd_of(&r.samples, r.rate, seg, seg / 2)
        })
        .collect::<mcgid::Result<Vec<_>>>()?;
    let mut out = spectra.first().cloned().unwrap_or_default();
    for spectrum in &spectra[1..] {
        for (acc, (_, p)) in out.iter_mut().zip(spectrum) {
            acc.1 += p;
        }
    }
    let n = spectra.len().max(1) as f64;
    out.iter_mut().for_each(|v| v.1 /= n);
    Ok(out)
}

pub fn denoise(ctx: &Context) -> Result<Vec<&'static str>> {
    let d = &ctx.cfg.denoise;
    let raw = archive::load_recordings(&ctx.path(RECORDINGS))?;
    let results = raw
        .par_iter()
        .map(|r| denoise::denoise(r, &d.filter, &d.cancel))
        .collect::<mcgid::Result<Vec<_>>>()?;

    let mut blocks = String::from("recording,subject,col,row,env_field_nt,segment,block,start_s,status,frequency_hz,amplitude_pt\n");
    let mut n_blocks = 0;
    let mut fitted = 0;
    for (i, (rec, diags)) in results.iter().enumerate() {
        let (col, row) = rec.position.map_or((String::new(), String::new()), |(c, r)| (c.to_string(), r.to_string()));
        for b in diags {
            n_blocks += 1;
            let status = match &b.status {
                BlockStatus::Fitted => {
                    fitted += 1;
                    "fitted"
                }
                BlockStatus::BelowThreshold => "below-threshold",
                BlockStatus::PassedThrough(_) => "passed-through",
            };
            let (f, a) = b.fits.first().map_or((String::new(), String::new()), |s| (s.frequency.to_string(), s.amplitude.to_string()));
            let _ = writeln!(
                blocks,
                "{i},{},{col},{row},{},{},{},{},{status},{f},{a}",
                rec.subject_id, rec.env_field, rec.segment_id, b.index, b.start
            );
        }
    }
    let trim = if d.trim_transients { d.filter.transient_len(ctx.cfg.siggen.rate) } else { 0 };
    let clean: Vec<Recording> = results
        .into_iter()
        .map(|(r, _)| {
            let n = r.samples.len();
            if 2 * trim < n {
                r.with_samples(r.samples[trim..n - trim].to_vec())
            } else {
                r
            }
        })
        .collect();

    let psd_raw = mean_psd(&raw, d.psd_segment)?;
    let psd_clean = mean_psd(&clean, d.psd_segment)?;
    let before = denoise::band_power(&psd_raw, BAND.0, BAND.1);
    let after = denoise::band_power(&psd_clean, BAND.0, BAND.1);
    let summary = DenoiseSummary {
        recordings: clean.len(),
        blocks: n_blocks,
        fitted_blocks: fitted,
        band_power_raw: before,
        band_power_denoised: after,
        band_reduction_db: 10.0 * (before / after.max(f64::MIN_POSITIVE)).log10(),
    };
    log::info!("denoise: 49-51 Hz band power down {:.1} dB", summary.band_reduction_db);

    archive::save_recordings(&clean, &ctx.path(DENOISED))?;
    std::fs::write(ctx.path(DENOISE_BLOCKS), blocks)?;
    std::fs::write(ctx.path(PSD_RAW), denoise::psd_csv(&psd_raw))?;
    std::fs::write(ctx.path(PSD_DENOISED), denoise::psd_csv(&psd_clean))?;
    write_json(ctx, DENOISE_SUMMARY, &summary)?;
    Ok(vec![DENOISED, DENOISE_BLOCKS, PSD_RAW, PSD_DENOISED, DENOISE_SUMMARY])
}

pub fn tfr(ctx: &Context) -> Result<Vec<&'static str>> {
    let t = &ctx.cfg.tfr;
    let recs = archive::load_recordings(&ctx.path(DENOISED))?;
    let first = recs.first().ok_or(mcgid::Error::Empty("denoised recordings"))?;
    let bank = tfr::build_wavelet_bank(t.cascade_iters)?;
    let plan = ScalogramPlan::new(&bank, first.samples.len(), first.rate, &t.spec())?;
    let raw = recs.par_iter().map(|r| plan.apply(r)).collect::<mcgid::Result<Vec<TfMatrix>>>()?;
    let mode = match t.normalize {
        Normalization::None => NormalizeMode::None,
        Normalization::PerMatrix => NormalizeMode::PerMatrix,
        Normalization::GlobalMax => NormalizeMode::GlobalMax(raw.iter().map(TfMatrix::max).fold(0.0, f32::max)),
    };
    let mats: Vec<TfMatrix> = raw.par_iter().map(|m| tfr::normalize_tf(m, mode)).collect();
    log::info!("tfr: {} scalograms of {}x{}", mats.len(), t.size, t.size);

    let mut freqs = String::from("row,frequency_hz\n");
    for (i, f) in plan.frequencies().iter().enumerate() {
        let _ = writeln!(freqs, "{i},{f}");
    }
    archive::save_matrices(&mats, &ctx.path(SCALOGRAMS))?;
    std::fs::write(ctx.path(FREQUENCIES), freqs)?;
    Ok(vec![SCALOGRAMS, FREQUENCIES])
}

type SessionKey = (String, u64, usize);

pub fn dataset(ctx: &Context) -> Result<Vec<&'static str>> {
    let cfg = ctx.cfg;
    let mats = archive::load_matrices(&ctx.path(SCALOGRAMS))?;
    let mut subjects: Vec<String> = Vec::new();
    let mut order: Vec<SessionKey> = Vec::new();
    let mut sessions: HashMap<SessionKey, BTreeMap<(usize, usize), TfMatrix>> = HashMap::new();
    for m in mats {
        if !subjects.contains(&m.subject_id) {
            subjects.push(m.subject_id.clone());
        }
        let key = (m.subject_id.clone(), m.env_field.to_bits(), m.segment_id);
        let cells = sessions.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            BTreeMap::new()
        });
        cells.insert(m.position, m);
    }
    let mut samples = Vec::new();
    for key in &order {
        samples.extend(dataset::window_scan(&sessions[key], &cfg.siggen.grid, &subjects)?);
    }
    let config_hash = u64::from_str_radix(&crate::pipeline::Stage::Dataset.config_hash(cfg), 16).unwrap_or(0);
    let ds = Dataset::new(samples, subjects, cfg.tfr.size, Manifest { config_hash, seed: ctx.seed })?;
    let train_count = cfg.dataset.train_count_for(ds.len());
    let (train, test) = dataset::split_with(&ds, train_count, ctx.seed, cfg.dataset.split_mode)?;
    log::info!("dataset: {} samples, {} train / {} test", ds.len(), train.len(), test.len());

    let mut info = dataset::manifest_text(&ds);
    let _ = writeln!(info, "split: {:?}, train {} / test {}", cfg.dataset.split_mode, train.len(), test.len());
    dataset::save(&ds, &ctx.path(DATASET))?;
    dataset::save(&train, &ctx.path(TRAIN))?;
    dataset::save(&test, &ctx.path(TEST))?;
    std::fs::write(ctx.path(DATASET_INFO), info)?;
    Ok(vec![DATASET, TRAIN, TEST, DATASET_INFO])
}

pub fn train(ctx: &Context) -> Result<Vec<&'static str>> {
    let data = dataset::load(&ctx.path(TRAIN))?;
    let model = Model::<f32>::new(ctx.cfg.model_spec(), ctx.seed)?;
    let tc = ctx.cfg.train_config(ctx.seed);
    log::info!("train: {} samples, {} parameters, {} epochs", data.len(), model.n_params(), tc.epochs);
    let (model, history) = nn::train_observed(model, &data, &tc, |e| {
        log::info!("epoch {:>3}  loss {:.4}  acc {:.4}", e.epoch, e.loss, e.accuracy);
    })?;
    nn::save_model(&model, &ctx.path(CHECKPOINT))?;
    std::fs::write(ctx.path(HISTORY), history.to_csv())?;
    Ok(vec![CHECKPOINT, HISTORY])
}

fn load_model(ctx: &Context) -> Result<Model<f32>> {
    Ok(nn::load_model_for(&ctx.path(CHECKPOINT), &ctx.cfg.model_spec())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSweep {
    pub label: String,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub test_samples: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
    /// One-vs-rest threshold sweeps on each class probability.
    pub sweeps: Vec<ClassSweep>,
}

pub fn eval(ctx: &Context) -> Result<Vec<&'static str>> {
    let test = dataset::load(&ctx.path(TEST))?;
    let model = load_model(ctx)?;
    let probs = nn::predict_all(&model, &test)?;
    let preds: Vec<usize> = probs.iter().map(|p| nn::predicted_class(p)).collect();
    let actuals: Vec<usize> = test.samples.iter().map(|s| s.label).collect();
    let cm = eval::confusion(&preds, &actuals, test.n_classes())?.with_labels(test.subjects.clone())?;
    let report = eval::metrics(&cm)?;
    log::info!("eval: accuracy {:.4} on {} samples", report.accuracy, test.len());

    let thresholds: Vec<f64> = (0..ctx.cfg.eval.thresholds).map(|i| i as f64 / (ctx.cfg.eval.thresholds - 1) as f64).collect();
    let mut sweeps = Vec::new();
    let mut sens = String::from("class,threshold,sensitivity,specificity\n");
    for (c, label) in test.subjects.iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|p| f64::from(p[c])).collect();
        let binary: Vec<usize> = actuals.iter().map(|&a| usize::from(a == c)).collect();
        match eval::sweep_at(&scores, &binary, &thresholds) {
            Ok(points) => {
                for p in &points {
                    let _ = writeln!(sens, "{label},{},{},{}", p.threshold, p.sensitivity, p.specificity);
                }
                sweeps.push(ClassSweep { label: label.clone(), points });
            }
            Err(e) => log::warn!("eval: no one-vs-rest sweep for {label}: {e}"),
        }
    }

    let mut pred_csv = String::from("index,actual,predicted");
    for label in &test.subjects {
        let _ = write!(pred_csv, ",p_{label}");
    }
    pred_csv.push('\n');
    for (i, p) in probs.iter().enumerate() {
        let _ = write!(pred_csv, "{i},{},{}", test.subjects[actuals[i]], test.subjects[preds[i]]);
        for v in p {
            let _ = write!(pred_csv, ",{v}");
        }
        pred_csv.push('\n');
    }

    std::fs::write(ctx.path(CONFUSION_CSV), cm.to_csv())?;
    std::fs::write(ctx.path(CONFUSION_TXT), cm.to_table())?;
    std::fs::write(ctx.path(METRICS_CSV), report.to_csv())?;
    std::fs::write(ctx.path(METRICS_TXT), report.to_table())?;
    std::fs::write(ctx.path(SENSITIVITY), sens)?;
    std::fs::write(ctx.path(PREDICTIONS), pred_csv)?;
    write_json(ctx, EVAL_SUMMARY, &EvalSummary { test_samples: test.len(), confusion: cm, metrics: report, sweeps })?;
    Ok(vec![CONFUSION_CSV, CONFUSION_TXT, METRICS_CSV, METRICS_TXT, SENSITIVITY, PREDICTIONS, EVAL_SUMMARY])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub surface: AccuracySurface,
    pub contours: Vec<Contour>,
}

pub fn sweep(ctx: &Context) -> Result<Vec<&'static str>> {
    let test = dataset::load(&ctx.path(TEST))?;
    let model = load_model(ctx)?;
    let grid = ctx.cfg.noise_grid(ctx.seed);
    log::info!(
        "sweep: {}x{} cells over {} samples",
        grid.gaussian_intensities.len(),
        grid.random_intensities.len(),
        test.len()
    );
    let surface = robustness::snr_sweep(&model, &test, &grid)?;
    let contours = robustness::extract_contours(&surface, &ctx.cfg.robustness.targets);
    std::fs::write(ctx.path(SURFACE), surface.to_csv())?;
    std::fs::write(ctx.path(CONTOURS), robustness::contours_csv(&contours))?;
    write_json(ctx, SWEEP_SUMMARY, &SweepSummary { surface, contours })?;
    Ok(vec![SURFACE, CONTOURS, SWEEP_SUMMARY])
}

pub(crate) fn write_json<T: Serialize>(ctx: &Context, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(ctx.path(name), text)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(ctx: &Context, name: &str) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(ctx.path(name))?)?)
}
