//! Symlet-6 filters by spectral factorization of the Daubechies polynomial,
//! and the mother wavelet by the dyadic cascade.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vanishing moments of the wavelet.
pub const SYM6_MOMENTS: usize = 6;
pub const SYM6_TAPS: usize = 2 * SYM6_MOMENTS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletBank {
    pub name: String,
    /// Low-pass reconstruction filter h, sum sqrt(2).
    pub scaling_filter: Vec<f64>,
    /// g_k = (-1)^k h_{L-1-k}.
    pub wavelet_filter: Vec<f64>,
    /// psi sampled at t = i / 2^cascade_iters on [0, L-1].
    pub mother_samples: Vec<f64>,
    pub cascade_iters: u32,
    /// Frequency (cycles per unit of wavelet time) at the peak of |psi_hat|.
    pub center_frequency: f64,
    /// Peak of `sqrt(u) |psi_hat(u)|`: with L2-normalized kernels a pure tone's
    /// scalogram peaks at the scale `ridge_frequency * rate / f`.
    pub ridge_frequency: f64,
}

impl WaveletBank {
    pub fn support(&self) -> f64 {
        (self.scaling_filter.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        1.0 / (1u64 << self.cascade_iters) as f64
    }

    /// Linear interpolation of the discretized mother wavelet; zero outside the support.
    pub fn psi(&self, t: f64) -> f64 {
        if !(0.0..=self.support()).contains(&t) {
            return 0.0;
        }
        let pos = t / self.step();
        let i = pos.floor() as usize;
        let s = &self.mother_samples;
        if i + 1 >= s.len() {
            return s[s.len() - 1];
        }
        let frac = pos - i as f64;
        s[i] * (1.0 - frac) + s[i + 1] * frac
    }
}

pub fn build_wavelet_bank(cascade_iters: u32) -> Result<WaveletBank> {
    if !(4..=20).contains(&cascade_iters) {
        return Err(Error::param("cascade_iters", format!("{cascade_iters} outside [4, 20]")));
    }
    let h = symlet_filter(SYM6_MOMENTS);
    let g = quadrature_mirror(&h);
    let phi = scaling_function(&h, cascade_iters);
    let psi = mother_from_scaling(&g, &phi, cascade_iters);
    let dt = 1.0 / (1u64 << cascade_iters) as f64;
    let center_frequency = peak_frequency(&psi, dt, 0.0);
    let ridge_frequency = peak_frequency(&psi, dt, 0.5);
    Ok(WaveletBank {
        name: "sym6".into(),
        scaling_filter: h,
        wavelet_filter: g,
        mother_samples: psi,
        cascade_iters,
        center_frequency,
        ridge_frequency,
    })
}

pub fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect()
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Roots of a real polynomial (coefficients lowest degree first) by
/// Durand-Kerner iteration followed by Newton polishing.
fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let monic: Vec<Complex64> = coeffs.iter().map(|c| Complex64::new(c / lead, 0.0)).collect();
    let eval = |z: Complex64| monic.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c);
    let deriv = |z: Complex64| {
        monic.iter().enumerate().skip(1).rev().fold(Complex64::new(0.0, 0.0), |acc, (k, c)| acc * z + c * k as f64)
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..deg {
            let zi = roots[i];
            let denom = (0..deg).filter(|&j| j != i).fold(Complex64::new(1.0, 0.0), |acc, j| acc * (zi - roots[j]));
            let step = eval(zi) / denom;
            roots[i] = zi - step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..5 {
            let d = deriv(*r);
            if d.norm() == 0.0 {
                break;
            }
            *r -= eval(*r) / d;
        }
    }
    roots
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut p = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        p = next;
    }
    p
}

/// Phase non-linearity of an FIR: RMS deviation of the unwrapped phase from
/// its best linear fit over (0, pi).
fn phase_nonlinearity(h: &[f64]) -> f64 {
    let n = 512;
    let mut prev = 0.0;
    let mut offset = 0.0;
    let mut pts = Vec::with_capacity(n);
    for i in 1..n {
        let w = std::f64::consts::PI * i as f64 / n as f64;
        let resp: Complex64 = h.iter().enumerate().map(|(k, c)| Complex64::from_polar(*c, -w * k as f64)).sum();
        let mut ph = resp.arg() + offset;
        while ph - prev > std::f64::consts::PI {
            ph -= std::f64::consts::TAU;
            offset -= std::f64::consts::TAU;
        }
        while prev - ph > std::f64::consts::PI {
            ph += std::f64::consts::TAU;
            offset += std::f64::consts::TAU;
        }
        prev = ph;
        pts.push((w, ph));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (pts.iter().map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum::<f64>() / m).sqrt()
}

/// Least-asymmetric orthonormal scaling filter with `moments` vanishing
/// moments, in reconstruction order (sum sqrt(2)).
pub fn symlet_filter(moments: usize) -> Vec<f64> {
    let n = moments as u64;
    // P(y) = sum_k C(N-1+k, k) y^k
    let p: Vec<f64> = (0..n).map(|k| binomial(n - 1 + k, k)).collect();
    let y_roots = poly_roots(&p);

    // Each y root gives a reciprocal z pair from z^2 - (2 - 4y) z + 1 = 0.
    // Group conjugate y roots so the filter stays real.
    let mut groups: Vec<Vec<Complex64>> = Vec::new();
    let mut used = vec![false; y_roots.len()];
    for i in 0..y_roots.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let y = y_roots[i];
        let b = Complex64::new(2.0, 0.0) - y * 4.0;
        let disc = (b * b - 4.0).sqrt();
        let z_in = (b + disc) / 2.0;
        let z_in = if z_in.norm() <= 1.0 { z_in } else { (b - disc) / 2.0 };
        if y.im.abs() < 1e-9 {
            groups.push(vec![Complex64::new(z_in.re, 0.0)]);
        } else {
            if let Some(j) = (i + 1..y_roots.len()).find(|&j| !used[j] && (y_roots[j] - y.conj()).norm() < 1e-6) {
                used[j] = true;
            }
            groups.push(vec![z_in, z_in.conj()]);
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..(1u32 << groups.len()) {
        let mut roots: Vec<Complex64> = vec![Complex64::new(-1.0, 0.0); moments];
        for (gi, g) in groups.iter().enumerate() {
            for z in g {
                roots.push(if mask & (1 << gi) == 0 { *z } else { 1.0 / z });
            }
        }
        let poly = poly_from_roots(&roots);
        let sum: f64 = poly.iter().map(|c| c.re).sum();
        let h: Vec<f64> = poly.iter().map(|c| c.re * std::f64::consts::SQRT_2 / sum).collect();
        let score = phase_nonlinearity(&h);
        if best.as_ref().is_none_or(|(s, _)| score < *s - 1e-12) {
            best = Some((score, h));
        }
    }
    let mut h = best.expect("at least one factorization").1;
    // Orientation: energy concentrated in the second half, as in the
    // conventional reconstruction-order tables.
    let half = h.len() / 2;
    let front: f64 = h[..half].iter().map(|v| v * v).sum();
    let back: f64 = h[half..].iter().map(|v| v * v).sum();
    if front > back {
        h.reverse();
    }
    h
}

/// Scaling function at dyadic points i / 2^iters on [0, L-1]: exact values at
/// the integers from the refinement eigenvector, then dyadic refinement.
fn scaling_function(h: &[f64], iters: u32) -> Vec<f64> {
    let l = h.len();
    let s2 = std::f64::consts::SQRT_2;
    // phi(n) = sqrt2 * sum_m h[2n - m] phi(m), n, m in 0..l; solve with sum phi = 1.
    let size = l;
    let mut a = vec![vec![0.0; size]; size];
    for n in 0..size {
        for m in 0..size {
            let idx = 2 * n as isize - m as isize;
            if idx >= 0 && (idx as usize) < l {
                a[n][m] = s2 * h[idx as usize];
            }
        }
        a[n][n] -= 1.0;
    }
    let mut rhs = vec![0.0; size];
    // replace the last equation with the normalization
    a[size - 1] = vec![1.0; size];
    rhs[size - 1] = 1.0;
    let mut phi_int = solve_dense(a, rhs);
    phi_int[0] = 0.0;
    phi_int[size - 1] = 0.0;

    let mut level = phi_int;
    for j in 0..iters {
        let stride = 1usize << j;
        let new_len = (l - 1) * (stride * 2) + 1;
        let next: Vec<f64> = (0..new_len)
            .map(|n| {
                if n % 2 == 0 {
                    return level[n / 2];
                }
                // phi(n / 2^(j+1)) = sqrt2 * sum_k h_k phi((n - k 2^j) / 2^j)
                let mut acc = 0.0;
                for (k, hk) in h.iter().enumerate() {
                    let idx = n as isize - (k * stride) as isize;
                    if idx >= 0 && (idx as usize) < level.len() {
                        acc += hk * level[idx as usize];
                    }
                }
                s2 * acc
            })
            .collect();
        level = next;
    }
    level
}

fn mother_from_scaling(g: &[f64], phi: &[f64], iters: u32) -> Vec<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let per_unit = 1usize << iters;
    (0..phi.len())
        .map(|n| {
            let mut acc = 0.0;
            for (k, gk) in g.iter().enumerate() {
                let idx = 2 * n as isize - (k * per_unit) as isize;
                if idx >= 0 && (idx as usize) < phi.len() {
                    acc += gk * phi[idx as usize];
                }
            }
            s2 * acc
        })
        .collect()
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Peak of `u^weight |psi_hat(u)|`.
fn peak_frequency(psi: &[f64], dt: f64, weight: f64) -> f64 {
    let nfft = (psi.len() * 8).next_power_of_two();
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        psi.iter().map(|v| rustfft::num_complex::Complex::new(*v, 0.0)).collect();
    buf.resize(nfft, rustfft::num_complex::Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mags: Vec<f64> = buf[..nfft / 2].iter().enumerate().map(|(k, c)| c.norm() * (k as f64).powf(weight)).collect();
    let k = (1..mags.len() - 1).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
    // parabolic refinement on log magnitude
    let (l, c, r) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let denom = l - 2.0 * c + r;
    let shift = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    (k as f64 + shift) / (nfft as f64 * dt)
}
