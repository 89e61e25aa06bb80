//! Low-pass plus adaptive sine cancellation on synthetic recordings.

use std::f64::consts::TAU;

use mcgid::denoise::{band_power, cancel_ifn, denoise, fit_sine_block, psd, BlockStatus, CancelSpec, FilterSpec};
use mcgid::rng;
use mcgid::siggen::{generate_cardiac_template, inject_noise, NoiseSpec, Recording, SubjectProfile};
use rand_distr::{Distribution, Normal};

fn template(duration: f64) -> Recording {
    let mut p = SubjectProfile::reference("s0");
    p.hr_jitter = 0.0;
    generate_cardiac_template(&p, 1000.0, duration, 3).unwrap()
}

fn central(x: &[f64]) -> &[f64] {
    let cut = x.len() / 10;
    &x[cut..x.len() - cut]
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn band_db(before: &Recording, after: &Recording) -> f64 {
    let p0 = band_power(&psd(before, 4096, 2048).unwrap(), 49.0, 51.0);
    let p1 = band_power(&psd(after, 4096, 2048).unwrap(), 49.0, 51.0);
    10.0 * (p0 / p1).log10()
}

#[test]
fn static_powerline_tone_is_removed() {
    let clean = template(15.0);
    let noisy = clean.with_samples(clean.samples.iter().enumerate().map(|(i, v)| v + 1500.0 * (TAU * 50.0 * i as f64 / 1000.0 + 0.7).sin()).collect());
    let (out, _) = denoise(&noisy, &FilterSpec::default(), &CancelSpec::default()).unwrap();
    assert!(band_db(&noisy, &out) >= 40.0);
    let filtered_clean = mcgid::denoise::lowpass(&clean, &FilterSpec::default()).unwrap();
    let resid: Vec<f64> = out.samples.iter().zip(&filtered_clean.samples).map(|(a, b)| a - b).collect();
    let rms = (central(&resid).iter().map(|v| v * v).sum::<f64>() / central(&resid).len() as f64).sqrt();
    assert!(rms <= 40.0, "residual {rms} pT");
}

#[test]
fn drifting_interference_is_removed_and_template_recovered() {
    let clean = template(15.0);
    let noise = NoiseSpec::default();
    assert_eq!(noise.ifn_amp, 1500.0);
    let noisy = inject_noise(&clean, &noise, 21);
    let (out, diags) = denoise(&noisy, &FilterSpec::default(), &CancelSpec::default()).unwrap();
    assert!(diags.iter().all(|d| d.status == BlockStatus::Fitted));
    let db = band_db(&noisy, &out);
    assert!(db >= 40.0, "{db} dB");
    let r = correlation(central(&out.samples), central(&clean.samples));
    assert!(r >= 0.98, "correlation {r}");
}

#[test]
fn block_frequencies_follow_a_linear_ramp() {
    let rate = 1000.0;
    let drift = 0.02;
    let x: Vec<f64> = (0..15_000)
        .map(|i| {
            let t = i as f64 / rate;
            800.0 * (TAU * (50.0 * t + 0.5 * drift * t * t)).sin()
        })
        .collect();
    let rec = template(15.0).with_samples(x);
    let (_, diags) = cancel_ifn(&rec, &CancelSpec { harmonics: vec![1.0], ..Default::default() }).unwrap();
    let freqs: Vec<f64> = diags.iter().map(|d| d.fits[0].frequency).collect();
    assert_eq!(freqs.len(), 3);
    for (d, f) in diags.iter().zip(&freqs) {
        let truth = 50.0 + drift * (d.start + d.len / 2.0);
        assert!((f - truth).abs() <= 0.05, "{f} vs {truth}");
    }
    assert!(freqs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn noisy_fits_are_accurate_across_trials() {
    let rate = 1000.0;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut amp_err = Vec::new();
    let mut freq_err = Vec::new();
    for trial in 0..100u64 {
        let mut rng = rng::stream(77, &[trial]);
        let x: Vec<f64> = (0..5000).map(|i| 40.0 * (TAU * 50.0 * i as f64 / rate + 0.3).sin() + noise.sample(&mut rng)).collect();
        let fit = fit_sine_block(&x, rate, 50.2, 0.5).unwrap();
        amp_err.push((fit.amplitude - 40.0).abs());
        freq_err.push((fit.frequency - 50.0).abs());
    }
    let p95 = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[94]
    };
    assert!(p95(&mut amp_err) <= 0.1);
    assert!(p95(&mut freq_err) <= 0.01);
}
