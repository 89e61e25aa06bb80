//! Additive noise on time-frequency matrices, a two-axis accuracy sweep over
//! Gaussian and uniform noise intensities, and marching-squares contours of
//! the resulting accuracy surface.
//!
//! Intensities are in reciprocal decibels: by default intensity `i` means an
//! SNR of `1 / i` dB against the RMS of the matrix being perturbed, and
//! intensity 0 means no noise at all. Other readings plug in through
//! [`SnrMapping`].

use std::collections::HashMap;
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{predicted_class, LabeledSet, Model};
use crate::num::Real;
use crate::rng;
use crate::tfr::TfMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-sigma * sqrt(3), sigma * sqrt(3)]`, which has deviation `sigma`.
    Uniform,
}

impl NoiseKind {
    fn index(self) -> u64 {
        match self {
            NoiseKind::Gaussian => 0,
            NoiseKind::Uniform => 1,
        }
    }
}

/// Maps a noise intensity to a target SNR in decibels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrMapping {
    /// `SNR_dB = 1 / i`.
    #[default]
    ReciprocalDb,
    /// `SNR_dB = -i`.
    NegativeDb,
}

impl SnrMapping {
    /// `None` for intensity 0 (no noise).
    pub fn snr_db(self, intensity: f64) -> Option<f64> {
        if intensity == 0.0 {
            return None;
        }
        Some(match self {
            SnrMapping::ReciprocalDb => 1.0 / intensity,
            SnrMapping::NegativeDb => -intensity,
        })
    }

    /// Noise deviation `rms / 10^(SNR_dB / 20)`.
    pub fn sigma(self, signal_rms: f64, intensity: f64) -> f64 {
        self.snr_db(intensity).map_or(0.0, |db| signal_rms / 10f64.powf(db / 20.0))
    }
}

fn check_intensity(intensity: f64) -> Result<()> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(Error::param("intensity", format!("must be finite and >= 0, got {intensity}")));
    }
    Ok(())
}

pub fn rms<T: Real>(values: &[T]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    (ss / values.len() as f64).sqrt()
}

/// `len` zero-mean draws with deviation `sigma`.
pub fn noise_field(len: usize, kind: NoiseKind, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    match kind {
        NoiseKind::Gaussian => {
            let d = Normal::new(0.0, sigma).expect("finite sigma");
            (0..len).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::Uniform => {
            let a = sigma * 3f64.sqrt();
            let d = Uniform::new_inclusive(-a, a).expect("finite bound");
            (0..len).map(|_| d.sample(rng)).collect()
        }
    }
}

pub fn add_tf_noise(m: &TfMatrix, kind: NoiseKind, intensity: f64, seed: u64) -> Result<TfMatrix> {
    add_tf_noise_with(m, kind, intensity, seed, SnrMapping::default())
}

pub fn add_tf_noise_with(m: &TfMatrix, kind: NoiseKind, intensity: f64, seed: u64, mapping: SnrMapping) -> Result<TfMatrix> {
    check_intensity(intensity)?;
    let mut out = m.clone();
    if intensity == 0.0 {
        return Ok(out);
    }
    let sigma = mapping.sigma(rms(&m.values), intensity);
    let noise = noise_field(m.values.len(), kind, sigma, &mut rng::stream(seed, &[kind.index()]));
    for (v, n) in out.values.iter_mut().zip(noise) {
        *v = (f64::from(*v) + n).max(0.0) as f32;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseGridSpec {
    pub gaussian_intensities: Vec<f64>,
    pub random_intensities: Vec<f64>,
    pub seed: u64,
    pub mapping: SnrMapping,
}

impl Default for NoiseGridSpec {
    fn default() -> Self {
        let axis: Vec<f64> = (0..=10).map(f64::from).collect();
        NoiseGridSpec { gaussian_intensities: axis.clone(), random_intensities: axis, seed: 0, mapping: SnrMapping::default() }
    }
}

impl NoiseGridSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, axis) in [("robustness.gaussian_intensities", &self.gaussian_intensities), ("robustness.random_intensities", &self.random_intensities)] {
            if axis.is_empty() {
                return Err(Error::param(field, "must not be empty"));
            }
            if let Some(v) = axis.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::param(field, format!("intensities must be finite and >= 0, got {v}")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::param(field, "intensities must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Accuracy over the (Gaussian, uniform) intensity grid: `accuracy[g][r]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySurface {
    pub gaussian: Vec<f64>,
    pub random: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
    pub samples: usize,
}

impl AccuracySurface {
    pub fn new(gaussian: Vec<f64>, random: Vec<f64>, accuracy: Vec<Vec<f64>>, samples: usize) -> Result<Self> {
        if accuracy.len() != gaussian.len() {
            return Err(Error::LengthMismatch(accuracy.len(), gaussian.len()));
        }
        if let Some(row) = accuracy.iter().find(|r| r.len() != random.len()) {
            return Err(Error::LengthMismatch(row.len(), random.len()));
        }
        if let Some(v) = accuracy.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param("accuracy", format!("must lie in [0, 1], got {v}")));
        }
        Ok(AccuracySurface { gaussian, random, accuracy, samples })
    }

    pub fn at(&self, g: usize, r: usize) -> f64 {
        self.accuracy[g][r]
    }

    /// Long form: one `(g_intensity, r_intensity, accuracy)` row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("g_intensity,r_intensity,accuracy\n");
        for (gi, g) in self.gaussian.iter().enumerate() {
            for (ri, r) in self.random.iter().enumerate() {
                let _ = writeln!(out, "{g},{r},{}", self.accuracy[gi][ri]);
            }
        }
        out
    }
}

/// Applies both noise kinds to every channel of `input`, each channel
/// scaled by its own RMS.
#[allow(clippy::too_many_arguments)]
fn perturb<T: Real>(input: &[T], channel_len: usize, g: f64, r: f64, mapping: SnrMapping, seed: u64, cell: (usize, usize), sample: usize) -> Vec<T> {
    let mut out = input.to_vec();
    for (c, chunk) in out.chunks_mut(channel_len).enumerate() {
        let signal = rms(chunk);
        let mut noise = vec![0.0; chunk.len()];
        for (kind, intensity) in [(NoiseKind::Gaussian, g), (NoiseKind::Uniform, r)] {
            let sigma = mapping.sigma(signal, intensity);
            if sigma == 0.0 {
                continue;
            }
            let mut rng = rng::stream(seed, &[cell.0 as u64, cell.1 as u64, sample as u64, c as u64, kind.index()]);
            for (n, d) in noise.iter_mut().zip(noise_field(chunk.len(), kind, sigma, &mut rng)) {
                *n += d;
            }
        }
        for (v, n) in chunk.iter_mut().zip(noise) {
            *v = T::lit((v.to_f64_lossy() + n).max(0.0));
        }
    }
    out
}

/// Test-time accuracy of a frozen model at every grid cell. The cell with
/// both intensities 0 sees the clean inputs.
pub fn snr_sweep<T: Real, S: LabeledSet<T>>(model: &Model<T>, data: &S, grid: &NoiseGridSpec) -> Result<AccuracySurface> {
    grid.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("robustness test set"));
    }
    let spec = model.spec();
    let channel_len = spec.input_size * spec.input_size;
    for i in 0..data.len() {
        if data.input(i).len() != spec.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "sample {i} has {} values, model expects {}x{}x{}",
                data.input(i).len(),
                spec.in_channels,
                spec.input_size,
                spec.input_size
            )));
        }
        if data.label(i) >= spec.n_classes {
            return Err(Error::LabelOutOfRange { label: data.label(i), classes: spec.n_classes });
        }
    }
    let (ng, nr, n) = (grid.gaussian_intensities.len(), grid.random_intensities.len(), data.len());
    let hits: Vec<bool> = (0..ng * nr * n)
        .into_par_iter()
        .map(|job| {
            let (cell, i) = (job / n, job % n);
            let (gi, ri) = (cell / nr, cell % nr);
            let (g, r) = (grid.gaussian_intensities[gi], grid.random_intensities[ri]);
            let probs = if g == 0.0 && r == 0.0 {
                model.predict(data.input(i))?
            } else {
                model.predict(&perturb(data.input(i), channel_len, g, r, grid.mapping, grid.seed, (gi, ri), i))?
            };
            Ok(predicted_class(&probs) == data.label(i))
        })
        .collect::<Result<_>>()?;
    let accuracy = hits
        .chunks(n * nr)
        .map(|row| row.chunks(n).map(|cell| cell.iter().filter(|&&h| h).count() as f64 / n as f64).collect())
        .collect();
    AccuracySurface::new(grid.gaussian_intensities.clone(), grid.random_intensities.clone(), accuracy, n)
}

/// Level set of one target accuracy as polylines in `(g_intensity, r_intensity)` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub target: f64,
    pub polylines: Vec<Vec<(f64, f64)>>,
}

impl Contour {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }
}

pub const DEFAULT_TARGETS: [f64; 2] = [0.95, 0.85];

/// Grid edge between `(i, j)` and `(i + 1, j)` (`along_g`) or `(i, j + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Edge {
    i: usize,
    j: usize,
    along_g: bool,
}

/// Marching squares on the cell-vertex grid; a vertex is inside when its
/// accuracy is at least the target. Saddles are resolved by the cell mean.
pub fn extract_contours(surface: &AccuracySurface, targets: &[f64]) -> Vec<Contour> {
    targets
        .iter()
        .map(|&target| {
            if !(0.0..=1.0).contains(&target) {
                log::warn!("contour target {target} outside [0, 1]; returning an empty contour");
                return Contour { target, polylines: Vec::new() };
            }
            Contour { target, polylines: contour_at(surface, target) }
        })
        .collect()
}

fn contour_at(s: &AccuracySurface, target: f64) -> Vec<Vec<(f64, f64)>> {
    let (ng, nr) = (s.gaussian.len(), s.random.len());
    if ng < 2 || nr < 2 {
        return Vec::new();
    }
    let inside = |i: usize, j: usize| s.accuracy[i][j] >= target;
    let point = |e: Edge| -> (f64, f64) {
        let (i2, j2) = if e.along_g { (e.i + 1, e.j) } else { (e.i, e.j + 1) };
        let (v0, v1) = (s.accuracy[e.i][e.j], s.accuracy[i2][j2]);
        let t = (target - v0) / (v1 - v0);
        let (g0, g1) = (s.gaussian[e.i], s.gaussian[i2]);
        let (r0, r1) = (s.random[e.j], s.random[j2]);
        (g0 + t * (g1 - g0), r0 + t * (r1 - r0))
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..ng - 1 {
        for j in 0..nr - 1 {
            // Corners counter-clockwise from (i, j); edge k joins corner k and k + 1.
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let edges = [
                Edge { i, j, along_g: true },
                Edge { i: i + 1, j, along_g: false },
                Edge { i, j: j + 1, along_g: true },
                Edge { i, j, along_g: false },
            ];
            let state: Vec<bool> = corners.iter().map(|&(a, b)| inside(a, b)).collect();
            let crossing: Vec<usize> = (0..4).filter(|&k| state[k] != state[(k + 1) % 4]).collect();
            match crossing.len() {
                2 => segments.push((edges[crossing[0]], edges[crossing[1]])),
                4 => {
                    let mean = corners.iter().map(|&(a, b)| s.accuracy[a][b]).sum::<f64>() / 4.0;
                    // Cut off the two corners whose state differs from the centre.
                    let lone = if (mean >= target) == state[0] { [1, 3] } else { [0, 2] };
                    for k in lone {
                        segments.push((edges[(k + 3) % 4], edges[k]));
                    }
                }
                _ => {}
            }
        }
    }
    chain(&segments).into_iter().map(|line| line.into_iter().map(point).collect()).collect()
}

/// Joins segments sharing an edge into polylines, open ones first.
fn chain(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let open_starts: Vec<usize> = (0..segments.len()).filter(|&k| by_edge[&segments[k].0].len() == 1 || by_edge[&segments[k].1].len() == 1).collect();
    for start in open_starts.into_iter().chain(0..segments.len()) {
        if used[start] {
            continue;
        }
        let (a, b) = segments[start];
        let first = if by_edge[&a].len() == 1 { a } else if by_edge[&b].len() == 1 { b } else { a };
        let mut line = vec![first];
        let mut current = start;
        let mut at = first;
        loop {
            used[current] = true;
            let (x, y) = segments[current];
            let next_edge = if x == at { y } else { x };
            line.push(next_edge);
            at = next_edge;
            match by_edge[&at].iter().find(|&&k| !used[k]) {
                Some(&k) => current = k,
                None => break,
            }
        }
        lines.push(line);
    }
    lines
}

/// One row per vertex: `target,polyline,point,g_intensity,r_intensity`.
pub fn contours_csv(contours: &[Contour]) -> String {
    let mut out = String::from("target,polyline,point,g_intensity,r_intensity\n");
    for c in contours {
        for (li, line) in c.polylines.iter().enumerate() {
            for (pi, (g, r)) in line.iter().enumerate() {
                let _ = writeln!(out, "{},{li},{pi},{g},{r}", c.target);
            }
        }
    }
    out
}
