use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wavelet::WaveletBank;
use crate::error::{Error, Result};
use crate::siggen::Recording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalogramSpec {
    /// Rows (scales) and columns (time bins).
    pub size: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for ScalogramSpec {
    fn default() -> Self {
        ScalogramSpec { size: 60, f_min: 0.5, f_max: 75.0 }
    }
}

impl ScalogramSpec {
    /// Full-resolution 240 x 240 matrices.
    pub fn full_size() -> Self {
        ScalogramSpec { size: 240, ..Default::default() }
    }

    pub fn validate(&self, rate: f64) -> Result<()> {
        if self.size < 2 {
            return Err(Error::param("tfr.size", format!("must be >= 2, got {}", self.size)));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::param("tfr.f_min", format!("need 0 < f_min < f_max, got {}..{}", self.f_min, self.f_max)));
        }
        if !(self.f_max < rate / 2.0) {
            return Err(Error::param("tfr.f_max", format!("{} Hz is not below Nyquist {}", self.f_max, rate / 2.0)));
        }
        Ok(())
    }

    /// Log-spaced pseudo-frequencies, descending.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.size;
        let ratio = self.f_min / self.f_max;
        (0..n).map(|i| self.f_max * ratio.powf(i as f64 / (n - 1) as f64)).collect()
    }
}

/// `size x size` scalogram magnitudes, row-major, row 0 = highest frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfMatrix {
    pub values: Vec<f32>,
    pub size: usize,
    pub scale_freqs: Vec<f64>,
    pub t_span: f64,
    pub position: (usize, usize),
    pub subject_id: String,
    pub env_field: f64,
    pub segment_id: usize,
}

impl TfMatrix {
    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.size..(r + 1) * self.size]
    }
}

struct Row {
    nfft: usize,
    klen: usize,
    spectrum: Vec<Complex<f64>>,
}

/// Precomputed wavelet spectra for one (record length, rate, spec) triple;
/// reused across every recording of a session.
pub struct ScalogramPlan {
    len: usize,
    rate: f64,
    spec: ScalogramSpec,
    freqs: Vec<f64>,
    rows: Vec<Row>,
    ffts: BTreeMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl ScalogramPlan {
    pub fn new(bank: &WaveletBank, len: usize, rate: f64, spec: &ScalogramSpec) -> Result<Self> {
        spec.validate(rate)?;
        if len < 2 {
            return Err(Error::TooShort(format!("{len} samples; need at least 2")));
        }
        let freqs = spec.frequencies();
        let mut planner = FftPlanner::new();
        let mut ffts = BTreeMap::new();
        let rows = freqs
            .iter()
            .map(|&f| {
                let scale = bank.ridge_frequency * rate / f;
                let klen = (bank.support() * scale).floor() as usize + 1;
                let mut kernel: Vec<f64> = (0..klen).map(|m| bank.psi(m as f64 / scale)).collect();
                let norm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    kernel.iter_mut().for_each(|v| *v /= norm);
                }
                // correlation = convolution with the time-reversed wavelet
                kernel.reverse();
                let nfft = (len + klen - 1).next_power_of_two();
                let fwd = ffts
                    .entry(nfft)
                    .or_insert_with(|| (planner.plan_fft_forward(nfft), planner.plan_fft_inverse(nfft)))
                    .0
                    .clone();
                let mut spectrum: Vec<Complex<f64>> = kernel.iter().map(|v| Complex::new(*v, 0.0)).collect();
                spectrum.resize(nfft, Complex::new(0.0, 0.0));
                fwd.process(&mut spectrum);
                Row { nfft, klen, spectrum }
            })
            .collect();
        Ok(ScalogramPlan { len, rate, spec: spec.clone(), freqs, rows, ffts })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Full-resolution |CWT| (rows x len) of the mean-removed signal.
    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.len {
            return Err(Error::ShapeMismatch(format!("plan built for {} samples, got {}", self.len, x.len())));
        }
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let mut signal_ffts: BTreeMap<usize, Vec<Complex<f64>>> = BTreeMap::new();
        for (&nfft, (fwd, _)) in &self.ffts {
            let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
            buf.resize(nfft, Complex::new(0.0, 0.0));
            fwd.process(&mut buf);
            signal_ffts.insert(nfft, buf);
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let sig = &signal_ffts[&row.nfft];
                let mut buf: Vec<Complex<f64>> = sig.iter().zip(&row.spectrum).map(|(a, b)| a * b).collect();
                self.ffts[&row.nfft].1.process(&mut buf);
                let scale = 1.0 / row.nfft as f64;
                let start = (row.klen - 1) / 2;
                buf[start..start + self.len].iter().map(|c| (c.re * scale).abs()).collect()
            })
            .collect())
    }

    /// `size x size` magnitudes with the time axis bin-averaged.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f32>> {
        let coeffs = self.coefficients(x)?;
        let n = self.spec.size;
        let len = self.len;
        let mut out = Vec::with_capacity(n * n);
        for row in &coeffs {
            for j in 0..n {
                let lo = j * len / n;
                let hi = ((j + 1) * len / n).max(lo + 1).min(len);
                let lo = lo.min(hi - 1);
                let mean = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                out.push(mean as f32);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, rec: &Recording) -> Result<TfMatrix> {
        if (rec.rate - self.rate).abs() > 1e-9 * self.rate {
            return Err(Error::ShapeMismatch(format!("plan rate {} Hz, recording rate {} Hz", self.rate, rec.rate)));
        }
        let values = self.transform(&rec.samples)?;
        Ok(TfMatrix {
            values,
            size: self.spec.size,
            scale_freqs: self.freqs.clone(),
            t_span: rec.duration(),
            position: rec.position.unwrap_or((0, 0)),
            subject_id: rec.subject_id.clone(),
            env_field: rec.env_field,
            segment_id: rec.segment_id,
        })
    }
}

pub fn scalogram(rec: &Recording, bank: &WaveletBank, spec: &ScalogramSpec) -> Result<TfMatrix> {
    ScalogramPlan::new(bank, rec.samples.len(), rec.rate, spec)?.apply(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    None,
    /// Divide by a dataset-wide maximum.
    GlobalMax(f32),
    PerMatrix,
}

pub fn normalize_tf(m: &TfMatrix, mode: NormalizeMode) -> TfMatrix {
    let divisor = match mode {
        NormalizeMode::None => return m.clone(),
        NormalizeMode::GlobalMax(v) => v,
        NormalizeMode::PerMatrix => m.max(),
    };
    let mut out = m.clone();
    if divisor > 0.0 {
        out.values.iter_mut().for_each(|v| *v = (*v / divisor).min(1.0));
    }
    out
}
