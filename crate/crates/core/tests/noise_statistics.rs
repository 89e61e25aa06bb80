//! Statistical checks on time-frequency noise injection.

use mcgid::rng;
use mcgid::robustness::{add_tf_noise, noise_field, rms, NoiseKind, SnrMapping};
use mcgid::tfr::TfMatrix;

const N: usize = 1_000_000;

fn std_dev(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

#[test]
fn drawn_noise_has_the_prescribed_deviation() {
    for kind in [NoiseKind::Gaussian, NoiseKind::Uniform] {
        for intensity in [0.5, 2.0, 10.0] {
            let sigma = SnrMapping::ReciprocalDb.sigma(1.0, intensity);
            let noise = noise_field(N, kind, sigma, &mut rng::stream(11, &[intensity.to_bits()]));
            let s = std_dev(&noise);
            assert!((s / sigma - 1.0).abs() < 0.01, "{kind:?} at {intensity}: {s} vs {sigma}");
        }
    }
}

#[test]
fn both_kinds_share_one_deviation() {
    let sigma = SnrMapping::ReciprocalDb.sigma(3.0, 2.0);
    let g = std_dev(&noise_field(N, NoiseKind::Gaussian, sigma, &mut rng::stream(1, &[])));
    let u = std_dev(&noise_field(N, NoiseKind::Uniform, sigma, &mut rng::stream(2, &[])));
    assert!((g / u - 1.0).abs() < 0.01, "{g} vs {u}");
}

#[test]
fn matrix_noise_scales_with_matrix_rms() {
    // Values far above zero so clamping never triggers.
    let size = 1000;
    let values: Vec<f32> = (0..size * size).map(|i| 100.0 + (i % 7) as f32).collect();
    let m = TfMatrix { values, size, scale_freqs: vec![], t_span: 3.0, position: (0, 0), subject_id: "s".into(), env_field: 0.0, segment_id: 0 };
    let intensity = 1.0 / 30.0;
    let sigma = rms(&m.values) / 10f64.powf(30.0 / 20.0);
    for kind in [NoiseKind::Gaussian, NoiseKind::Uniform] {
        let noisy = add_tf_noise(&m, kind, intensity, 5).unwrap();
        let diff: Vec<f64> = noisy.values.iter().zip(&m.values).map(|(a, b)| f64::from(*a) - f64::from(*b)).collect();
        assert!((std_dev(&diff) / sigma - 1.0).abs() < 0.01, "{kind:?}");
    }
}
