//! Synthetic cardiac magnetic field recordings on a planar sensor grid.
//!
//! A subject is a PQRST template (sum of Gaussian bumps per beat) radiated
//! by one static current dipole below the grid. Each grid cell sees the
//! template scaled by the dipole's z-field gain, plus powerline interference,
//! baseline wander and sensor noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Residual DC offset (pT) left per nT of ambient field after gradiometric subtraction.
pub const ENV_OFFSET_PT_PER_NT: f64 = 1e-3;
/// Ambient field at which the white sensor noise doubles.
pub const ENV_NOISE_REF_NT: f64 = 80_000.0;
/// Period of the powerline amplitude modulation.
const AM_PERIOD_S: f64 = 20.0;

/// Ambient field strengths used during collection, nT.
pub const REFERENCE_ENV_FIELDS: [f64; 6] = [8_000.0, 20_000.0, 40_000.0, 47_000.0, 60_000.0, 80_000.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Cell pitch in metres.
    pub spacing: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { rows: 7, cols: 7, spacing: 0.05 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::param("grid", format!("need at least 2x2 cells, got {}x{}", self.cols, self.rows)));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::param("grid.spacing", format!("must be > 0, got {}", self.spacing)));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Cells as `(col, row)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (c, r)))
    }

    /// Sensor location in the chest plane (z = 0), metres.
    pub fn location(&self, (col, row): (usize, usize)) -> [f64; 3] {
        [col as f64 * self.spacing, row as f64 * self.spacing, 0.0]
    }

    pub fn check(&self, (col, row): (usize, usize)) -> Result<()> {
        if col >= self.cols || row >= self.rows {
            return Err(Error::PositionOutOfBounds { col, row, cols: self.cols, rows: self.rows });
        }
        Ok(())
    }
}

/// One Gaussian deflection of the cardiac cycle; center and width are cycle fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    /// Beats per minute.
    pub heart_rate: f64,
    /// P, Q, R, S, T in order.
    pub waves: [Wave; 5],
    /// Dipole location relative to grid origin (m); z < 0 is below the chest plane.
    pub dipole_position: [f64; 3],
    pub dipole_orientation: [f64; 3],
    /// Fractional standard deviation of the beat-to-beat interval.
    pub hr_jitter: f64,
}

impl SubjectProfile {
    /// Reference morphology: R peak 20 pT, S valley -5 pT.
    pub fn reference(subject_id: impl Into<String>) -> Self {
        SubjectProfile {
            subject_id: subject_id.into(),
            heart_rate: 60.0,
            waves: [
                Wave { amplitude: 3.0, center: 0.20, width: 0.030 },
                Wave { amplitude: -3.0, center: 0.37, width: 0.010 },
                Wave { amplitude: 20.0, center: 0.40, width: 0.012 },
                Wave { amplitude: -5.0, center: 0.44, width: 0.012 },
                Wave { amplitude: 6.0, center: 0.65, width: 0.050 },
            ],
            dipole_position: [0.15, 0.15, -0.08],
            dipole_orientation: [0.0, 0.0, 1.0],
            hr_jitter: 0.0,
        }
    }

    /// A cohort of `n` distinguishable subjects (cycles through five archetypes,
    /// perturbing further members deterministically).
    pub fn cohort(n: usize) -> Vec<Self> {
        // On-axis source strength relative to the strongest cell's trace.
        const SOURCE_SCALE: f64 = 4.0;
        const HR: [f64; 5] = [62.0, 74.0, 57.0, 83.0, 68.0];
        const R_AMP: [f64; 5] = [20.0, 17.0, 23.0, 15.0, 19.0];
        const QRS_W: [f64; 5] = [0.012, 0.016, 0.010, 0.014, 0.018];
        const T_CENTER: [f64; 5] = [0.65, 0.60, 0.70, 0.58, 0.67];
        const T_AMP: [f64; 5] = [6.0, 4.0, 7.5, 3.0, 5.0];
        const P_CENTER: [f64; 5] = [0.20, 0.24, 0.17, 0.26, 0.21];
        const DIPOLE: [[f64; 3]; 5] = [
            [0.14, 0.16, -0.120],
            [0.17, 0.13, -0.130],
            [0.12, 0.19, -0.115],
            [0.18, 0.17, -0.125],
            [0.15, 0.11, -0.110],
        ];
        const ORIENT: [[f64; 3]; 5] = [
            [0.60, -0.70, 0.30],
            [0.80, -0.40, 0.45],
            [0.30, -0.90, 0.20],
            [0.70, -0.60, -0.20],
            [0.50, -0.50, 0.70],
        ];
        (0..n)
            .map(|i| {
                let k = i % 5;
                let round = (i / 5) as f64;
                let mut p = SubjectProfile::reference(format!("S{}", i + 1));
                p.heart_rate = HR[k] + 3.0 * round;
                p.waves[0].center = P_CENTER[k];
                p.waves[2].amplitude = R_AMP[k];
                p.waves[2].width = QRS_W[k];
                p.waves[1].width = QRS_W[k] * 0.8;
                p.waves[3].width = QRS_W[k];
                p.waves[3].center = 0.40 + 3.5 * QRS_W[k];
                p.waves[1].center = 0.40 - 2.5 * QRS_W[k];
                p.waves[4].center = T_CENTER[k];
                p.waves[4].amplitude = T_AMP[k];
                let mut pos = DIPOLE[k];
                pos[0] += 0.01 * round;
                p.dipole_position = pos;
                let o = ORIENT[k];
                let n = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
                p.dipole_orientation = [o[0] / n, o[1] / n, o[2] / n];
                p.hr_jitter = 0.02;
                for w in &mut p.waves {
                    w.amplitude *= SOURCE_SCALE;
                }
                p
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(30.0..=200.0).contains(&self.heart_rate) {
            return Err(Error::param("heart_rate", format!("{} outside [30, 200]", self.heart_rate)));
        }
        if self.waves.iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::param("waves", "all widths must be > 0"));
        }
        if self.waves.windows(2).any(|w| !(w[0].center < w[1].center)) {
            return Err(Error::param("waves", "centers must be strictly increasing P<Q<R<S<T"));
        }
        let o = self.dipole_orientation;
        let norm = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::param("dipole_orientation", format!("norm {norm} is not 1")));
        }
        if !(self.dipole_position[2] < 0.0) {
            return Err(Error::param("dipole_position", "dipole must lie below the grid plane (z < 0)"));
        }
        if !(self.hr_jitter >= 0.0) {
            return Err(Error::param("hr_jitter", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub ifn_freq: f64,
    /// Peak amplitude of the powerline fundamental, pT.
    pub ifn_amp: f64,
    /// `(multiple, relative amplitude)` pairs.
    pub ifn_harmonics: Vec<(f64, f64)>,
    /// Linear frequency ramp, Hz/s.
    pub ifn_freq_drift: f64,
    /// Peak slope of the amplitude modulation, fraction of `ifn_amp` per second.
    pub ifn_amp_drift: f64,
    pub baseline_amp: f64,
    pub baseline_freq: f64,
    pub gaussian_std: f64,
    /// Ambient field, nT; enters as a small residual DC offset.
    pub env_field_offset: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            ifn_freq: 50.0,
            ifn_amp: 1500.0,
            ifn_harmonics: vec![(3.0, 0.1)],
            ifn_freq_drift: 1e-4,
            ifn_amp_drift: 1e-4,
            baseline_amp: 0.5,
            baseline_freq: 0.25,
            gaussian_std: 1.0,
            env_field_offset: 0.0,
        }
    }
}

impl NoiseSpec {
    /// No noise at all.
    pub fn silent() -> Self {
        NoiseSpec {
            ifn_amp: 0.0,
            ifn_harmonics: Vec::new(),
            ifn_freq_drift: 0.0,
            ifn_amp_drift: 0.0,
            baseline_amp: 0.0,
            gaussian_std: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ifn_freq > 0.0) {
            return Err(Error::param("noise.ifn_freq", "must be > 0"));
        }
        let amps = [self.ifn_amp, self.baseline_amp, self.gaussian_std];
        if amps.iter().any(|a| !(*a >= 0.0)) || self.ifn_harmonics.iter().any(|h| !(h.1 >= 0.0)) {
            return Err(Error::param("noise", "amplitudes must be >= 0"));
        }
        if self.ifn_harmonics.iter().any(|h| !(h.0 > 0.0)) {
            return Err(Error::param("noise.ifn_harmonics", "harmonic multiples must be > 0"));
        }
        if !(self.baseline_freq >= 0.0 && self.baseline_freq < 1.0) {
            return Err(Error::param("noise.baseline_freq", "must be in [0, 1) Hz"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    /// Flux density, pT.
    pub samples: Vec<f64>,
    pub rate: f64,
    /// `(col, row)`; `None` for a template not yet placed on the grid.
    pub position: Option<(usize, usize)>,
    pub subject_id: String,
    pub env_field: f64,
    pub segment_id: usize,
}

impl Recording {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Recording {
        Recording { samples, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Recording {
        Recording {
            samples: Vec::new(),
            rate: self.rate,
            position: self.position,
            subject_id: self.subject_id.clone(),
            env_field: self.env_field,
            segment_id: self.segment_id,
        }
    }
}

/// PQRST waveform as it would appear at the reference (on-axis) position.
pub fn generate_cardiac_template(profile: &SubjectProfile, rate: f64, duration: f64, seed: u64) -> Result<Recording> {
    if !(rate > 0.0) {
        return Err(Error::param("rate", format!("must be > 0, got {rate}")));
    }
    if !(duration >= 0.0) {
        return Err(Error::param("duration", format!("must be >= 0, got {duration}")));
    }
    profile.validate()?;

    let n = (duration * rate).round() as usize;
    let mut samples = vec![0.0; n];
    let mut rng = rng::stream(seed, &[]);
    let nominal = 60.0 / profile.heart_rate;
    let interval = |rng: &mut rand_chacha::ChaCha8Rng| {
        if profile.hr_jitter == 0.0 {
            nominal
        } else {
            let z: f64 = StandardNormal.sample(rng);
            nominal * (1.0 + profile.hr_jitter * z).clamp(0.5, 1.5)
        }
    };

    // One extra leading beat so T-wave tails cover t = 0.
    let phase: f64 = rng.random();
    let mut start = -(1.0 + phase) * nominal;
    while start < duration {
        let len = interval(&mut rng);
        for w in &profile.waves {
            let center = start + w.center * len;
            let sigma = w.width * len;
            let lo = ((center - 6.0 * sigma) * rate).floor().max(0.0) as usize;
            let hi = (((center + 6.0 * sigma) * rate).ceil().max(0.0) as usize).min(n);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
                let d = i as f64 / rate - center;
                *s += w.amplitude * (-d * d * inv).exp();
            }
        }
        start += len;
    }

    Ok(Recording {
        samples,
        rate,
        position: None,
        subject_id: profile.subject_id.clone(),
        env_field: 0.0,
        segment_id: 0,
    })
}

/// z-component of a unit point dipole's field at offset `r` (arbitrary units).
pub fn dipole_bz(r: [f64; 3], m: [f64; 3]) -> f64 {
    let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let rh = [r[0] / norm, r[1] / norm, r[2] / norm];
    let m_dot = m[0] * rh[0] + m[1] * rh[1] + m[2] * rh[2];
    (3.0 * m_dot * rh[2] - m[2]) / norm.powi(3)
}

/// Field gain at a grid cell, normalized to the on-axis field at the grid
/// plane's distance from the dipole (so a cell directly above a z-oriented
/// dipole has gain 1).
pub fn dipole_gain(grid: &GridSpec, position: (usize, usize), profile: &SubjectProfile) -> Result<f64> {
    grid.check(position)?;
    let loc = grid.location(position);
    let p = profile.dipole_position;
    let r = [loc[0] - p[0], loc[1] - p[1], loc[2] - p[2]];
    let depth = (loc[2] - p[2]).abs();
    if depth == 0.0 {
        return Err(Error::param("dipole_position", "dipole lies in the grid plane"));
    }
    let anchor = 2.0 / depth.powi(3);
    Ok(dipole_bz(r, profile.dipole_orientation) / anchor)
}

pub fn spatial_project(
    template: &Recording,
    grid: &GridSpec,
    position: (usize, usize),
    profile: &SubjectProfile,
) -> Result<Recording> {
    let gain = dipole_gain(grid, position, profile)?;
    let mut out = template.with_samples(template.samples.iter().map(|s| s * gain).collect());
    out.position = Some(position);
    Ok(out)
}

/// Adds powerline interference (drifting fundamental plus harmonics), baseline
/// wander, white sensor noise and the ambient-field offset.
pub fn inject_noise(clean: &Recording, noise: &NoiseSpec, seed: u64) -> Recording {
    let mut rng = rng::stream(seed, &[]);
    let two_pi = std::f64::consts::TAU;
    let ifn_phase: f64 = rng.random::<f64>() * two_pi;
    let am_phase: f64 = rng.random::<f64>() * two_pi;
    let harmonic_phases: Vec<f64> = noise.ifn_harmonics.iter().map(|_| rng.random::<f64>() * two_pi).collect();
    let baseline_phase: f64 = rng.random::<f64>() * two_pi;
    let std = noise.gaussian_std * (1.0 + clean.env_field / ENV_NOISE_REF_NT);
    let offset = noise.env_field_offset * ENV_OFFSET_PT_PER_NT;
    let am_depth = noise.ifn_amp_drift * AM_PERIOD_S / two_pi;

    let samples = clean
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let t = i as f64 / clean.rate;
            let mut v = x;
            if noise.ifn_amp != 0.0 {
                let phase = two_pi * (noise.ifn_freq * t + 0.5 * noise.ifn_freq_drift * t * t) + ifn_phase;
                let amp = noise.ifn_amp * (1.0 + am_depth * (two_pi * t / AM_PERIOD_S + am_phase).sin());
                v += amp * phase.sin();
                for ((mult, rel), hp) in noise.ifn_harmonics.iter().zip(&harmonic_phases) {
                    v += amp * rel * (mult * phase + hp).sin();
                }
            }
            if noise.baseline_amp != 0.0 {
                v += noise.baseline_amp * (two_pi * noise.baseline_freq * t + baseline_phase).sin();
            }
            if std != 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += std * z;
            }
            v + offset
        })
        .collect();
    clean.with_samples(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub grid: GridSpec,
    pub env_fields: Vec<f64>,
    pub segments_per_cell: usize,
    pub rate: f64,
    pub duration: f64,
    pub noise: NoiseSpec,
}

/// One recording per (subject, environment, segment, cell), in that nesting
/// order with cells row-major.
pub fn generate_session(profiles: &[SubjectProfile], spec: &SessionSpec, seed: u64) -> Result<Vec<Recording>> {
    if profiles.is_empty() {
        return Err(Error::Empty("profiles"));
    }
    if spec.env_fields.is_empty() {
        return Err(Error::Empty("env_fields"));
    }
    spec.grid.validate()?;
    spec.noise.validate()?;
    for p in profiles {
        p.validate()?;
    }

    let n_env = spec.env_fields.len();
    let n_seg = spec.segments_per_cell;
    let keys: Vec<(usize, usize, usize)> = (0..profiles.len())
        .flat_map(|s| (0..n_env).flat_map(move |e| (0..n_seg).map(move |g| (s, e, g))))
        .collect();

    let templates: Vec<Recording> = keys
        .par_iter()
        .map(|&(s, e, g)| {
            let mut t = generate_cardiac_template(
                &profiles[s],
                spec.rate,
                spec.duration,
                rng::fork(seed, &[0, s as u64, e as u64, g as u64]),
            )?;
            t.env_field = spec.env_fields[e];
            t.segment_id = g;
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = spec.grid.cells().collect();
    let jobs: Vec<(usize, usize)> = (0..keys.len()).flat_map(|k| (0..cells.len()).map(move |c| (k, c))).collect();
    jobs.par_iter()
        .map(|&(k, c)| {
            let (s, e, g) = keys[k];
            let projected = spatial_project(&templates[k], &spec.grid, cells[c], &profiles[s])?;
            let noise = NoiseSpec { env_field_offset: spec.env_fields[e], ..spec.noise.clone() };
            Ok(inject_noise(&projected, &noise, rng::fork(seed, &[1, s as u64, e as u64, g as u64, c as u64])))
        })
        .collect()
}
