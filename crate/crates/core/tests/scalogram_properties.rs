//! Ridge placement, time covariance and energy behaviour of the scalogram.

use std::f64::consts::TAU;

use mcgid::siggen::Recording;
use mcgid::tfr::{build_wavelet_bank, normalize_tf, scalogram, NormalizeMode, ScalogramSpec, TfMatrix, WaveletBank};
use proptest::prelude::*;
use std::sync::OnceLock;

fn bank() -> &'static WaveletBank {
    static BANK: OnceLock<WaveletBank> = OnceLock::new();
    BANK.get_or_init(|| build_wavelet_bank(8).unwrap())
}

fn rec(samples: Vec<f64>) -> Recording {
    Recording { samples, rate: 1000.0, position: Some((0, 0)), subject_id: "s".into(), env_field: 0.0, segment_id: 0 }
}

fn tone(f: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (TAU * f * i as f64 / 1000.0).sin()).collect()
}

fn energy(m: &TfMatrix) -> f64 {
    m.values.iter().map(|v| f64::from(*v).powi(2)).sum()
}

#[test]
fn ten_hertz_ridge_lands_within_one_row() {
    let spec = ScalogramSpec::default();
    let m = scalogram(&rec(tone(10.0, 3000)), bank(), &spec).unwrap();
    let means: Vec<f64> = (0..m.size).map(|r| m.row(r).iter().map(|v| f64::from(*v)).sum::<f64>()).collect();
    let best = (0..m.size).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
    let step = (spec.f_max / spec.f_min).ln() / (spec.size - 1) as f64;
    assert!((m.scale_freqs[best] / 10.0).ln().abs() <= step, "ridge at {} Hz", m.scale_freqs[best]);
}

#[test]
fn bursts_shift_with_the_input() {
    let spec = ScalogramSpec::default();
    let n = 3000;
    let burst = |center: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 1000.0;
                (-((t - center) / 0.05).powi(2)).exp() * (TAU * 20.0 * t).sin()
            })
            .collect()
    };
    let ridge_col = |m: &TfMatrix| {
        let row = (0..m.size).min_by(|&a, &b| (m.scale_freqs[a] - 20.0).abs().total_cmp(&(m.scale_freqs[b] - 20.0).abs())).unwrap();
        let r = m.row(row);
        (0..m.size).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap() as i64
    };
    let base = ridge_col(&scalogram(&rec(burst(1.0)), bank(), &spec).unwrap());
    for shift in [100usize, 250, 500] {
        let moved = ridge_col(&scalogram(&rec(burst(1.0 + shift as f64 / 1000.0)), bank(), &spec).unwrap());
        let expected = (shift * spec.size) as f64 / n as f64;
        assert!(((moved - base) as f64 - expected).abs() <= 1.0, "shift {shift}: {} columns", moved - base);
    }
}

#[test]
fn global_max_normalization_divides_elementwise() {
    let m = scalogram(&rec(tone(7.0, 2500)), bank(), &ScalogramSpec { size: 16, ..Default::default() }).unwrap();
    let top = m.max() * 1.7;
    let out = normalize_tf(&m, NormalizeMode::GlobalMax(top));
    for (a, b) in out.values.iter().zip(&m.values) {
        assert_eq!(*a, (*b / top).min(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn disjoint_band_tone_never_lowers_energy(f1 in 2.0f64..8.0, f2 in 25.0f64..60.0, a2 in 0.1f64..3.0) {
        let spec = ScalogramSpec { size: 32, ..Default::default() };
        let x = tone(f1, 2000);
        let y: Vec<f64> = x.iter().zip(tone(f2, 2000)).map(|(a, b)| a + a2 * b).collect();
        let e1 = energy(&scalogram(&rec(x), bank(), &spec).unwrap());
        let e2 = energy(&scalogram(&rec(y), bank(), &spec).unwrap());
        prop_assert!(e2 >= e1, "{e2} < {e1}");
    }
}
