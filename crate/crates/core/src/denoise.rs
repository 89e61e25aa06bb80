//! Two-stage powerline denoiser: a zero-phase 75 Hz low-pass followed by
//! block-wise least-squares sine fitting and subtraction of the 50 Hz
//! interference, plus Welch PSD diagnostics.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::siggen::Recording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub cutoff: f64,
    /// FIR length; 0 picks the shortest Blackman length that reaches
    /// 40 dB attenuation at 1.5x cutoff (with margin).
    pub length: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { cutoff: 75.0, length: 0 }
    }
}

impl FilterSpec {
    pub fn validate(&self, rate: f64) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff < rate / 2.0) {
            return Err(Error::param(
                "filter.cutoff",
                format!("{} Hz must lie in (0, {}) for rate {rate}", self.cutoff, rate / 2.0),
            ));
        }
        Ok(())
    }

    pub fn taps_len(&self, rate: f64) -> usize {
        if self.length > 0 {
            self.length | 1
        } else {
            2 * (5.5 * rate / self.cutoff).ceil() as usize + 1
        }
    }

    /// Samples at each record end that depend on padding.
    pub fn transient_len(&self, rate: f64) -> usize {
        self.taps_len(rate) / 2
    }
}

/// Blackman-windowed sinc low-pass with unit DC gain; odd length, symmetric.
pub fn design_lowpass<T: Real>(cutoff: f64, rate: f64, len: usize) -> Vec<T> {
    let len = len | 1;
    let mid = (len / 2) as f64;
    let fc = cutoff / rate;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let n = i as f64 - mid;
            let sinc = if n == 0.0 { 2.0 * fc } else { (TAU * fc * n).sin() / (PI * n) };
            let x = i as f64 / (len - 1).max(1) as f64;
            let w = 0.42 - 0.5 * (TAU * x).cos() + 0.08 * (2.0 * TAU * x).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / dc)).collect()
}

/// |H(f)| of an FIR.
pub fn frequency_response<T: Real>(taps: &[T], freq: f64, rate: f64) -> f64 {
    let w = TAU * freq / rate;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, h)| {
        let h = h.to_f64_lossy();
        (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin())
    });
    (re * re + im * im).sqrt()
}

/// Point-symmetric extension: x(-i) = 2 x(0) - x(i), so value and slope are
/// continuous across the edge.
fn odd_extend<T: Real>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(two * x[0] - x[i.min(n - 1)]);
    }
    out.extend_from_slice(x);
    for i in 1..=pad {
        out.push(two * x[n - 1] - x[(n - 1).saturating_sub(i)]);
    }
    out
}

/// Centered (zero-phase) application of a symmetric FIR; output length equals input length.
pub fn filter_zero_phase<T: Real>(x: &[T], taps: &[T]) -> Vec<T> {
    if x.is_empty() {
        return Vec::new();
    }
    let half = taps.len() / 2;
    let ext = odd_extend(x, half);
    (0..x.len())
        .map(|i| {
            let window = &ext[i..i + taps.len()];
            window.iter().zip(taps.iter().rev()).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

pub fn lowpass(rec: &Recording, spec: &FilterSpec) -> Result<Recording> {
    spec.validate(rec.rate)?;
    let taps: Vec<f64> = design_lowpass(spec.cutoff, rec.rate, spec.taps_len(rec.rate));
    Ok(rec.with_samples(filter_zero_phase(&rec.samples, &taps)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineFit {
    pub amplitude: f64,
    pub frequency: f64,
    /// Radians in [-pi, pi); model is `A sin(2 pi f (t - block_start) + phase)`.
    pub phase: f64,
    pub block_start: f64,
    pub block_len: f64,
    /// `(sin, cos)` coefficients of `tau^d` for `d = 1, 2, ...`, where `tau`
    /// runs from -1/2 to 1/2 across the block. Empty for a pure sine.
    #[serde(default)]
    pub envelope: Vec<[f64; 2]>,
}

impl SineFit {
    pub fn value_at(&self, t: f64) -> f64 {
        let local = t - self.block_start;
        let base = TAU * self.frequency * local;
        let mut v = self.amplitude * (base + self.phase).sin();
        if !self.envelope.is_empty() {
            let tau = local / self.block_len - 0.5;
            let (s, c) = base.sin_cos();
            let mut power = 1.0;
            for [a, b] in &self.envelope {
                power *= tau;
                v += power * (a * s + b * c);
            }
        }
        v
    }
}

struct Projection {
    a: f64,
    b: f64,
    residual: f64,
}

fn project(x: &[f64], energy: f64, rate: f64, freq: f64) -> Projection {
    let (mut ss, mut cc, mut sc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let w = TAU * freq / rate;
    for (k, &v) in x.iter().enumerate() {
        let (s, c) = (w * k as f64).sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() <= 1e-12 * (ss * cc).max(f64::MIN_POSITIVE) {
        return Projection { a: 0.0, b: 0.0, residual: energy };
    }
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    Projection { a, b, residual: energy - (a * xs + b * xc) }
}

/// Least-squares fit of `A sin(2 pi f t + phi)`: grid search over
/// `f_init +- halfwidth` with (A, phi) solved in closed form, then golden-section
/// refinement around the best grid point.
pub fn fit_sine_block<T: Real>(block: &[T], rate: f64, f_init: f64, halfwidth: f64) -> Result<SineFit> {
    if !(f_init > 0.0) {
        return Err(Error::param("f_init", format!("must be > 0, got {f_init}")));
    }
    if !(rate > 0.0) {
        return Err(Error::param("rate", "must be > 0"));
    }
    let len_s = block.len() as f64 / rate;
    if len_s < 2.0 / f_init {
        return Err(Error::TooShort(format!(
            "{} samples ({len_s:.4} s) is under two cycles of {f_init} Hz",
            block.len()
        )));
    }
    let x: Vec<f64> = block.iter().map(|v| v.to_f64_lossy()).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let residual = |f: f64| project(&x, energy, rate, f).residual;

    let step = 0.25 / len_s;
    let lo = (f_init - halfwidth.abs()).max(step);
    let n_grid = ((f_init + halfwidth.abs() - lo) / step).ceil() as usize + 1;
    let (best_f, _) = (0..n_grid)
        .map(|i| lo + i as f64 * step)
        .map(|f| (f, residual(f)))
        .fold((f_init, f64::INFINITY), |acc, (f, r)| if r < acc.1 { (f, r) } else { acc });

    let freq = golden_min(residual, (best_f - step).max(step * 0.5), best_f + step, 1e-11 * best_f);
    let p = project(&x, energy, rate, freq);
    let amplitude = p.a.hypot(p.b);
    let mut phase = p.b.atan2(p.a);
    if phase >= PI {
        phase -= TAU;
    }
    Ok(SineFit { amplitude, frequency: freq, phase, block_start: 0.0, block_len: len_s, envelope: Vec::new() })
}

/// Refits `fit` at its frequency with `sum_d tau^d (a_d sin + b_d cos)`,
/// `d = 0..=order`, so slow amplitude and phase drift inside the block is
/// followed. Returns `fit` unchanged if the system is singular.
pub fn fit_envelope(x: &[f64], rate: f64, fit: &SineFit, order: usize) -> SineFit {
    if order == 0 || x.is_empty() {
        return fit.clone();
    }
    let m = 2 * (order + 1);
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0.0; m];
    let w = TAU * fit.frequency / rate;
    for (k, &v) in x.iter().enumerate() {
        let tau = k as f64 / rate / fit.block_len - 0.5;
        let (s, c) = (w * k as f64).sin_cos();
        let mut power = 1.0;
        for d in 0..=order {
            basis[2 * d] = power * s;
            basis[2 * d + 1] = power * c;
            power *= tau;
        }
        for i in 0..m {
            rhs[i] += v * basis[i];
            for j in 0..m {
                gram[i * m + j] += basis[i] * basis[j];
            }
        }
    }
    let Some(coef) = solve(gram, rhs) else {
        return fit.clone();
    };
    let (a, b) = (coef[0], coef[1]);
    let mut phase = b.atan2(a);
    if phase >= PI {
        phase -= TAU;
    }
    SineFit {
        amplitude: a.hypot(b),
        phase,
        envelope: coef[2..].chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        ..fit.clone()
    }
}

/// Gaussian elimination with partial pivoting on a dense `n x n` system.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= 1e-13 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Some(x)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CancelSpec {
    /// Seconds per refit.
    pub block_len: f64,
    pub f_init: f64,
    /// Multiples of the fitted fundamental to cancel, in order; 1 is the fundamental.
    pub harmonics: Vec<f64>,
    pub search_halfwidth: f64,
    /// Raised-cosine stitching width across block boundaries, seconds.
    pub crossfade: f64,
    /// A fitted component is subtracted only if it carries at least this
    /// fraction of the block energy.
    pub min_explained: f64,
    /// Polynomial order of the per-block amplitude/phase envelope; 0 fits a
    /// pure sine.
    pub envelope_order: usize,
    /// Seconds at each end of the record left out of the fits (the model is
    /// still subtracted there).
    pub edge_guard: f64,
}

impl Default for CancelSpec {
    fn default() -> Self {
        CancelSpec {
            block_len: 5.0,
            f_init: 50.0,
            harmonics: vec![1.0, 3.0],
            search_halfwidth: 0.5,
            crossfade: 0.1,
            min_explained: 1e-4,
            envelope_order: 2,
            edge_guard: 0.0,
        }
    }
}

impl CancelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_len > 0.0) {
            return Err(Error::param("cancel.block_len", "must be > 0"));
        }
        if !(self.f_init > 0.0) {
            return Err(Error::param("cancel.f_init", "must be > 0"));
        }
        if self.harmonics.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::param("cancel.harmonics", "multiples must be > 0"));
        }
        if !(self.edge_guard >= 0.0 && self.edge_guard.is_finite()) {
            return Err(Error::param("cancel.edge_guard", "must be finite and >= 0"));
        }
        if !(self.crossfade >= 0.0 && self.crossfade < self.block_len) {
            return Err(Error::param("cancel.crossfade", "must be in [0, block_len)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockStatus {
    Fitted,
    /// Nothing above the detection threshold; block left untouched.
    BelowThreshold,
    /// Fit failed or block too short; block left untouched.
    PassedThrough(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostic {
    pub index: usize,
    pub start: f64,
    pub len: f64,
    /// Subtracted components (fundamental first).
    pub fits: Vec<SineFit>,
    pub status: BlockStatus,
}

fn fit_block(x: &[f64], rate: f64, start: f64, index: usize, spec: &CancelSpec) -> BlockDiagnostic {
    let len = x.len() as f64 / rate;
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let mut work = x.to_vec();
    let mut fits = Vec::new();
    let mut fundamental = spec.f_init;
    for (h_idx, &mult) in spec.harmonics.iter().enumerate() {
        let f0 = if h_idx == 0 { spec.f_init * mult } else { fundamental * mult };
        if f0 >= rate / 2.0 {
            continue;
        }
        let fit = match fit_sine_block(&work, rate, f0, spec.search_halfwidth) {
            Ok(fit) => fit_envelope(&work, rate, &fit, spec.envelope_order),
            Err(e) => {
                return BlockDiagnostic { index, start, len, fits: Vec::new(), status: BlockStatus::PassedThrough(e.to_string()) }
            }
        };
        if h_idx == 0 {
            fundamental = fit.frequency / mult;
        }
        let model: Vec<f64> = (0..work.len()).map(|k| fit.value_at(k as f64 / rate)).collect();
        let explained: f64 = model.iter().map(|v| v * v).sum();
        if energy == 0.0 || explained < spec.min_explained * energy {
            continue;
        }
        for (w, m) in work.iter_mut().zip(&model) {
            *w -= m;
        }
        fits.push(SineFit { block_start: start, ..fit });
    }
    let status = if fits.is_empty() { BlockStatus::BelowThreshold } else { BlockStatus::Fitted };
    BlockDiagnostic { index, start, len, fits, status }
}

/// Refits and subtracts the interference every `block_len` seconds, stitching
/// adjacent block models with a raised-cosine crossfade.
pub fn cancel_ifn(rec: &Recording, spec: &CancelSpec) -> Result<(Recording, Vec<BlockDiagnostic>)> {
    spec.validate()?;
    let rate = rec.rate;
    let n = rec.samples.len();
    let block = ((spec.block_len * rate).round() as usize).max(1);
    let bounds: Vec<(usize, usize)> = (0..n).step_by(block).map(|s| (s, (s + block).min(n))).collect();

    let guard = (spec.edge_guard * rate).round() as usize;
    let diags: Vec<BlockDiagnostic> = bounds
        .par_iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let (fs, fe) = (s.max(guard), e.min(n.saturating_sub(guard)));
            let (fs, fe) = if fe > fs { (fs, fe) } else { (s, e) };
            fit_block(&rec.samples[fs..fe], rate, fs as f64 / rate, i, spec)
        })
        .collect();

    let half = (spec.crossfade * rate / 2.0).round() as isize;
    let model_at = |d: &BlockDiagnostic, t: f64| d.fits.iter().map(|f| f.value_at(t)).sum::<f64>();
    let mut out = rec.samples.clone();
    for (i, v) in out.iter_mut().enumerate() {
        let b = (i / block).min(bounds.len() - 1);
        let t = i as f64 / rate;
        let own = &diags[b];
        // Position relative to the nearest interior boundary.
        let (s, e) = bounds[b];
        let into = i as isize - s as isize;
        let left = e as isize - i as isize;
        let est = if half > 0 && b > 0 && into < half {
            let w = 0.5 - 0.5 * (PI * (into + half) as f64 / (2 * half) as f64).cos();
            w * model_at(own, t) + (1.0 - w) * model_at(&diags[b - 1], t)
        } else if half > 0 && b + 1 < bounds.len() && left <= half {
            let w = 0.5 - 0.5 * (PI * (half - left) as f64 / (2 * half) as f64).cos();
            (1.0 - w) * model_at(own, t) + w * model_at(&diags[b + 1], t)
        } else {
            model_at(own, t)
        };
        if est != 0.0 {
            *v -= est;
        }
    }
    Ok((rec.with_samples(out), diags))
}

/// Low-pass then block-wise sine cancellation.
pub fn denoise(rec: &Recording, filter: &FilterSpec, cancel: &CancelSpec) -> Result<(Recording, Vec<BlockDiagnostic>)> {
    let filtered = lowpass(rec, filter)?;
    // Keep the filter's edge transients out of the fits.
    let half_taps = filter.transient_len(rec.rate) as f64 / rec.rate;
    cancel_ifn(&filtered, &CancelSpec { edge_guard: cancel.edge_guard.max(half_taps), ..cancel.clone() })
}

/// One-sided Welch PSD with a Hann taper: `(frequency Hz, density pT^2/Hz)`.
pub fn psd(rec: &Recording, segment_len: usize, overlap: usize) -> Result<Vec<(f64, f64)>> {
    psd_of(&rec.samples, rec.rate, segment_len, overlap)
}

pub fn psd_of(x: &[f64], rate: f64, segment_len: usize, overlap: usize) -> Result<Vec<(f64, f64)>> {
    if segment_len < 2 {
        return Err(Error::param("segment_len", "must be >= 2"));
    }
    if segment_len > x.len() {
        return Err(Error::TooShort(format!("segment_len {segment_len} exceeds {} samples", x.len())));
    }
    if overlap >= segment_len {
        return Err(Error::param("overlap", "must be < segment_len"));
    }
    let step = segment_len - overlap;
    let window: Vec<f64> = (0..segment_len).map(|i| 0.5 - 0.5 * (TAU * i as f64 / segment_len as f64).cos()).collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut start = 0;
    while start + segment_len <= x.len() {
        for ((b, v), w) in buf.iter_mut().zip(&x[start..start + segment_len]).zip(&window) {
            *b = Complex::new(v * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (rate * u * segments as f64);
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (segment_len % 2 == 0 && k == bins - 1) { 1.0 } else { 2.0 };
            (k as f64 * rate / segment_len as f64, p * scale * one_sided)
        })
        .collect())
}

/// Integrated density over `[lo, hi]` Hz.
pub fn band_power(spectrum: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let df = if spectrum.len() > 1 { spectrum[1].0 - spectrum[0].0 } else { 0.0 };
    spectrum.iter().filter(|(f, _)| *f >= lo && *f <= hi).map(|(_, p)| p * df).sum()
}

pub fn psd_csv(spectrum: &[(f64, f64)]) -> String {
    let mut s = String::from("freq_hz,psd_pt2_per_hz\n");
    for (f, p) in spectrum {
        s.push_str(&format!("{f},{p}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn rec(samples: Vec<f64>, rate: f64) -> Recording {
        Recording { samples, rate, position: None, subject_id: "t".into(), env_field: 0.0, segment_id: 0 }
    }

    fn tone(freq: f64, amp: f64, phase: f64, n: usize, rate: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (TAU * freq * i as f64 / rate + phase).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn lowpass_keeps_constants() {
        let r = rec(vec![3.25; 2000], 1000.0);
        let out = lowpass(&r, &FilterSpec::default()).unwrap();
        assert_eq!(out.samples.len(), 2000);
        for v in &out.samples {
            assert!((v - 3.25).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_response_at_50_and_150_hz() {
        let spec = FilterSpec::default();
        let taps: Vec<f64> = design_lowpass(spec.cutoff, 1000.0, spec.taps_len(1000.0));
        assert!(20.0 * frequency_response(&taps, 150.0, 1000.0).log10() <= -40.0);
        assert!(20.0 * frequency_response(&taps, 112.5, 1000.0).log10() <= -40.0);
        assert!(20.0 * frequency_response(&taps, 50.0, 1000.0).log10() >= -1.0);

        // and on actual tones, away from the edges
        let n = 5000;
        let hi = lowpass(&rec(tone(150.0, 1.0, 0.2, n, 1000.0), 1000.0), &spec).unwrap();
        let lo = lowpass(&rec(tone(50.0, 1.0, 0.2, n, 1000.0), 1000.0), &spec).unwrap();
        let edge = 200;
        let r_in = rms(&tone(150.0, 1.0, 0.2, n, 1000.0)[edge..n - edge]);
        assert!(20.0 * (rms(&hi.samples[edge..n - edge]) / r_in).log10() <= -40.0);
        assert!(20.0 * (rms(&lo.samples[edge..n - edge]) / r_in).log10() >= -1.0);
    }

    #[test]
    fn lowpass_rejects_cutoff_at_nyquist() {
        let r = rec(vec![0.0; 100], 100.0);
        assert!(lowpass(&r, &FilterSpec { cutoff: 50.0, length: 0 }).is_err());
    }

    #[test]
    fn lowpass_is_linear() {
        let n = 1500;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.03).sin() * 10.0).collect();
        let spec = FilterSpec::default();
        let lx = lowpass(&rec(x.clone(), 1000.0), &spec).unwrap().samples;
        let ly = lowpass(&rec(y.clone(), 1000.0), &spec).unwrap().samples;
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let lc = lowpass(&rec(combo, 1000.0), &spec).unwrap().samples;
        for i in 0..n {
            assert!((lc[i] - (2.5 * lx[i] - 0.75 * ly[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn short_signals_filter_without_panic() {
        let out = lowpass(&rec(vec![1.0, 2.0, 3.0], 1000.0), &FilterSpec::default()).unwrap();
        assert_eq!(out.samples.len(), 3);
        assert!(lowpass(&rec(vec![], 1000.0), &FilterSpec::default()).unwrap().samples.is_empty());
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let x = tone(50.0, 40.0, 0.3, 5000, 1000.0);
        let fit = fit_sine_block(&x, 1000.0, 50.2, 0.5).unwrap();
        assert!((fit.amplitude / 40.0 - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.frequency / 50.0 - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.phase / 0.3 - 1.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn fit_of_zero_block() {
        let fit = fit_sine_block(&vec![0.0f64; 1000], 1000.0, 50.0, 0.5).unwrap();
        assert!(fit.amplitude.abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_sine_block(&vec![0.0f64; 30], 1000.0, 50.0, 0.5), Err(Error::TooShort(_))));
        assert!(fit_sine_block(&vec![0.0f64; 3000], 1000.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn fit_works_in_single_precision() {
        let x: Vec<f32> = tone(50.0, 40.0, -1.0, 3000, 1000.0).into_iter().map(|v| v as f32).collect();
        let fit = fit_sine_block(&x, 1000.0, 50.0, 0.5).unwrap();
        assert!((fit.amplitude - 40.0).abs() < 1e-3);
        assert!((fit.frequency - 50.0).abs() < 1e-5);
    }

    #[test]
    fn fit_beats_every_grid_candidate() {
        let rate = 1000.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 2.0).unwrap();
        let x: Vec<f64> =
            tone(49.93, 12.0, 1.1, 2000, rate).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
        let fit = fit_sine_block(&x, rate, 50.0, 0.5).unwrap();
        let sse = |a: f64, f: f64, p: f64| -> f64 {
            x.iter().enumerate().map(|(k, v)| (v - a * (TAU * f * k as f64 / rate + p).sin()).powi(2)).sum()
        };
        let best = sse(fit.amplitude, fit.frequency, fit.phase);
        for ia in 0..9 {
            for jf in 0..21 {
                for kp in 0..12 {
                    let a = 8.0 + ia as f64;
                    let f = 49.5 + jf as f64 * 0.05;
                    let p = -PI + kp as f64 * TAU / 12.0;
                    assert!(best <= sse(a, f, p) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn envelope_follows_slow_modulation() {
        let rate = 1000.0;
        let x: Vec<f64> = (0..5000)
            .map(|k| {
                let t = k as f64 / rate;
                (100.0 + 4.0 * t) * (TAU * (50.0 * t + 0.002 * t * t) + 0.4).sin()
            })
            .collect();
        let pure = fit_sine_block(&x, rate, 50.0, 0.5).unwrap();
        let rich = fit_envelope(&x, rate, &pure, 2);
        let resid = |f: &SineFit| rms(&x.iter().enumerate().map(|(k, v)| v - f.value_at(k as f64 / rate)).collect::<Vec<_>>());
        assert_eq!(rich.envelope.len(), 2);
        assert!(resid(&rich) < 0.02 * resid(&pure), "{} vs {}", resid(&rich), resid(&pure));
        assert_eq!(fit_envelope(&x, rate, &pure, 0), pure);
    }

    #[test]
    fn zero_ifn_passes_through() {
        let x: Vec<f64> = (0..4000).map(|i| 5.0 * (TAU * 1.3 * i as f64 / 1000.0).sin()).collect();
        let r = rec(x.clone(), 1000.0);
        let (out, diags) = cancel_ifn(&r, &CancelSpec::default()).unwrap();
        let err = out.samples.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-6 * x.iter().map(|v| v * v).sum::<f64>().sqrt());
        assert!(diags.iter().all(|d| d.status == BlockStatus::BelowThreshold));
    }

    #[test]
    fn short_trailing_block_is_passed_through() {
        // 5 s block + 30 ms tail (< 2 cycles of 50 Hz)
        let x = tone(50.0, 100.0, 0.0, 5030, 1000.0);
        let (out, diags) = cancel_ifn(&rec(x.clone(), 1000.0), &CancelSpec { crossfade: 0.0, ..Default::default() }).unwrap();
        assert_eq!(diags.len(), 2);
        assert!(matches!(diags[1].status, BlockStatus::PassedThrough(_)));
        assert_eq!(&out.samples[5000..], &x[5000..]);
        assert!(rms(&out.samples[..5000]) < 1e-6);
    }

    #[test]
    fn psd_basics() {
        let zero = psd_of(&vec![0.0; 4096], 1000.0, 1024, 512).unwrap();
        assert!(zero.iter().all(|(_, p)| *p == 0.0));

        let x = tone(50.0, 1.0, 0.0, 8192, 1000.0);
        let spec = psd_of(&x, 1000.0, 1024, 512).unwrap();
        let peak = spec.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((peak.0 - 50.0).abs() <= 1000.0 / 1024.0);

        assert!(psd_of(&x, 1000.0, 10_000, 0).is_err());
    }

    #[test]
    fn psd_integrates_to_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| noise.sample(&mut rng)).collect();
        let spec = psd_of(&x, 1000.0, 1024, 512).unwrap();
        let total = band_power(&spec, 0.0, 500.0);
        assert!((total / 9.0 - 1.0).abs() <= 0.05, "{total}");
    }
}
