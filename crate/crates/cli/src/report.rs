//! Collates stage outputs into `report.txt` and `summary.json`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use mcgid::eval::ClassMetrics;
use mcgid::robustness::Contour;

use crate::error::Result;
use crate::pipeline::{artifact::*, Context};
use crate::stages::{read_json, write_json, DenoiseSummary, EvalSummary, SweepSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub label: String,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub subjects: Vec<String>,
    pub test_samples: usize,
    pub accuracy: f64,
    pub macro_f1: Option<f64>,
    pub classes: Vec<ClassMetrics>,
    pub training: Option<TrainingSummary>,
    pub denoise_band_reduction_db: f64,
    /// Threshold maximizing sensitivity + specificity per class.
    pub operating_points: Vec<OperatingPoint>,
    /// Surface value at the first grid cell (no noise when both axes start at 0).
    pub clean_accuracy: f64,
    /// Surface value at the last grid cell.
    pub max_noise_accuracy: f64,
    pub contours: Vec<Contour>,
}

fn parse_history(text: &str) -> Option<TrainingSummary> {
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    let last: Vec<&str> = rows.last()?.split(',').collect();
    Some(TrainingSummary {
        epochs: rows.len(),
        final_loss: last.get(2)?.parse().ok()?,
        final_accuracy: last.get(3)?.parse().ok()?,
    })
}

pub fn report(ctx: &Context) -> Result<Vec<&'static str>> {
    let den: DenoiseSummary = read_json(ctx, DENOISE_SUMMARY)?;
    let ev: EvalSummary = read_json(ctx, EVAL_SUMMARY)?;
    let sw: SweepSummary = read_json(ctx, SWEEP_SUMMARY)?;
    let training = parse_history(&std::fs::read_to_string(ctx.path(HISTORY))?);
    let dataset_info = std::fs::read_to_string(ctx.path(DATASET_INFO))?;

    let operating_points: Vec<OperatingPoint> = ev
        .sweeps
        .iter()
        .filter_map(|s| {
            let best = s.points.iter().fold(None::<&mcgid::eval::SweepPoint>, |b, p| match b {
                Some(b) if b.sensitivity + b.specificity >= p.sensitivity + p.specificity => Some(b),
                _ => Some(p),
            })?;
            Some(OperatingPoint {
                label: s.label.clone(),
                threshold: best.threshold,
                sensitivity: best.sensitivity,
                specificity: best.specificity,
            })
        })
        .collect();

    let surface = &sw.surface;
    let (ng, nr) = (surface.gaussian.len(), surface.random.len());
    let summary = RunSummary {
        seed: ctx.cfg.seed,
        subjects: ev.confusion.labels().to_vec(),
        test_samples: ev.test_samples,
        accuracy: ev.metrics.accuracy,
        macro_f1: ev.metrics.macro_f1,
        classes: ev.metrics.classes.clone(),
        training,
        denoise_band_reduction_db: den.band_reduction_db,
        operating_points,
        clean_accuracy: surface.at(0, 0),
        max_noise_accuracy: surface.at(ng - 1, nr - 1),
        contours: sw.contours.clone(),
    };

    let mut r = String::new();
    let _ = writeln!(r, "MCG identification run (seed {})\n", summary.seed);
    r.push_str("== dataset ==\n");
    r.push_str(&dataset_info);
    let _ = writeln!(
        r,
        "\n== denoising ==\n{} recordings, {} of {} blocks fitted, 49-51 Hz band power reduced by {:.1} dB\n",
        den.recordings, den.fitted_blocks, den.blocks, den.band_reduction_db
    );
    if let Some(t) = &summary.training {
        let _ = writeln!(r, "== training ==\n{} epochs, final loss {:.4}, final training accuracy {:.2}%\n", t.epochs, t.final_loss, 100.0 * t.final_accuracy);
    }
    let _ = writeln!(r, "== confusion matrix (rows predicted, columns actual) ==\n{}", ev.confusion.to_table());
    let _ = writeln!(r, "== metrics ==\n{}", ev.metrics.to_table());
    r.push_str("== one-vs-rest operating points ==\n");
    for p in &summary.operating_points {
        let _ = writeln!(
            r,
            "{:<8} threshold {:.2}  sensitivity {:.2}%  specificity {:.2}%",
            p.label,
            p.threshold,
            100.0 * p.sensitivity,
            100.0 * p.specificity
        );
    }
    let _ = writeln!(r, "\n== noise robustness: accuracy % (rows Gaussian intensity, columns uniform intensity) ==");
    let _ = write!(r, "{:>6}", "g\\r");
    for v in &surface.random {
        let _ = write!(r, " {v:>6}");
    }
    r.push('\n');
    for (gi, g) in surface.gaussian.iter().enumerate() {
        let _ = write!(r, "{g:>6}");
        for ri in 0..nr {
            let _ = write!(r, " {:>6.2}", 100.0 * surface.at(gi, ri));
        }
        r.push('\n');
    }
    for c in &sw.contours {
        if c.is_empty() {
            let _ = writeln!(r, "contour {:.0}%: none", 100.0 * c.target);
        } else {
            let points: usize = c.polylines.iter().map(Vec::len).sum();
            let _ = writeln!(r, "contour {:.0}%: {} polyline(s), {} points", 100.0 * c.target, c.polylines.len(), points);
        }
    }

    std::fs::write(ctx.path(REPORT), r)?;
    write_json(ctx, SUMMARY, &summary)?;
    Ok(vec![REPORT, SUMMARY])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_tail() {
        let t = parse_history("epoch,learning_rate,loss,accuracy\n0,0.001,1.5,0.3\n1,0.001,0.9,0.7\n").unwrap();
        assert_eq!(t, TrainingSummary { epochs: 2, final_loss: 0.9, final_accuracy: 0.7 });
        assert!(parse_history("epoch,learning_rate,loss,accuracy\n").is_none());
    }
}
