//! Central finite-difference checks for every differentiable layer.

use mcgid::nn::{avgpool2, avgpool2_backward, conv2d_backward, conv2d_forward, Conv2d, DenseBlock, Model, ModelSpec, Se, Tensor, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference steps. A coordinate passes if either step agrees; the
/// smaller one covers points within the larger step of a rectifier kink.
const STEPS: [f64; 2] = [1e-5, 1e-7];

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative error between `analytic` and the central difference of `f` at `at`.
fn max_rel_err(analytic: &[f64], at: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(analytic.len(), at.len());
    let mut x = at.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        let mut best = f64::INFINITY;
        for h in STEPS {
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            best = best.min((analytic[i] - numeric).abs() / denom);
        }
        worst = worst.max(best);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d(seed in any::<u64>(), c in 1usize..4, o in 1usize..4, k in 1usize..4, stride in 1usize..3, pad in 0usize..3, h in 3usize..8, w in 3usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(&[c, h, w], rand_vec(c * h * w, &mut rng)).unwrap();
        let wt = Tensor::new(&[o, c, k, k], rand_vec(o * c * k * k, &mut rng)).unwrap();
        let b = rand_vec(o, &mut rng);
        let y = conv2d_forward(&x, &wt, &b, stride, pad).unwrap();
        let r = Tensor::new(y.shape(), rand_vec(y.len(), &mut rng)).unwrap();
        let g = conv2d_backward(&x, &wt, &b, stride, pad, &r).unwrap();

        let loss_x = |v: &[f64]| dot(conv2d_forward(&Tensor::new(&[c, h, w], v.to_vec()).unwrap(), &wt, &b, stride, pad).unwrap().data(), r.data());
        prop_assert!(max_rel_err(g.dx.data(), x.data(), loss_x) <= 1e-4);
        let loss_w = |v: &[f64]| dot(conv2d_forward(&x, &Tensor::new(wt.shape(), v.to_vec()).unwrap(), &b, stride, pad).unwrap().data(), r.data());
        prop_assert!(max_rel_err(g.dw.data(), wt.data(), loss_w) <= 1e-4);
        let loss_b = |v: &[f64]| dot(conv2d_forward(&x, &wt, v, stride, pad).unwrap().data(), r.data());
        prop_assert!(max_rel_err(&g.db, &b, loss_b) <= 1e-4);
    }

    #[test]
    fn pooling(seed in any::<u64>(), c in 1usize..4, h2 in 1usize..5, w2 in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (2 * h2, 2 * w2);
        let x = Tensor::new(&[c, h, w], rand_vec(c * h * w, &mut rng)).unwrap();
        let r = Tensor::new(&[c, h2, w2], rand_vec(c * h2 * w2, &mut rng)).unwrap();
        let dx = avgpool2_backward(&r, x.shape()).unwrap();
        let loss = |v: &[f64]| dot(avgpool2(&Tensor::new(&[c, h, w], v.to_vec()).unwrap()).unwrap().data(), r.data());
        prop_assert!(max_rel_err(dx.data(), x.data(), loss) <= 1e-6);
    }

    #[test]
    fn squeeze_excitation(seed in any::<u64>(), c in 2usize..9, r in 1usize..4, hw in 1usize..10) {
        prop_assume!(c / r >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let se = Se::new(c, r).unwrap();
        let p = rand_vec(se.n_params(), &mut rng);
        let x = rand_vec(c * hw, &mut rng);
        let rr = rand_vec(c * hw, &mut rng);
        let (_, cache) = se.forward(&p, &x, hw);
        let mut gp = vec![0.0; p.len()];
        let dx = se.backward(&p, &x, hw, &cache, &rr, &mut gp);
        prop_assert!(max_rel_err(&dx, &x, |v| dot(&se.forward(&p, v, hw).0, &rr)) <= 1e-4);
        prop_assert!(max_rel_err(&gp, &p, |v| dot(&se.forward(v, &x, hw).0, &rr)) <= 1e-4);
    }

    #[test]
    fn dense_block(seed in any::<u64>(), cin in 1usize..4, layers in 1usize..3, growth in 1usize..4, bottleneck in 1usize..6, h in 2usize..5, w in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DenseBlock::new(cin, layers, growth, bottleneck).unwrap();
        let p = rand_vec(d.n_params(), &mut rng);
        let x = rand_vec(cin * h * w, &mut rng);
        let (y, cache) = d.forward(&p, &x, h, w);
        let rr = rand_vec(y.len(), &mut rng);
        let mut gp = vec![0.0; p.len()];
        let dx = d.backward(&p, &y, h, w, &cache, &rr, &mut gp);
        prop_assert!(max_rel_err(&dx, &x, |v| dot(&d.forward(&p, v, h, w).0, &rr)) <= 1e-4);
        prop_assert!(max_rel_err(&gp, &p, |v| dot(&d.forward(v, &x, h, w).0, &rr)) <= 1e-4);
    }

    #[test]
    fn transition(seed in any::<u64>(), cin in 1usize..6, cout in 1usize..4, h2 in 1usize..4, w2 in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (2 * h2, 2 * w2);
        let t = Transition::new(cin, cout).unwrap();
        let p = rand_vec(t.n_params(), &mut rng);
        let x = rand_vec(cin * h * w, &mut rng);
        let (y, pre) = t.forward(&p, &x, h, w).unwrap();
        let rr = rand_vec(y.len(), &mut rng);
        let mut gp = vec![0.0; p.len()];
        let dx = t.backward(&p, &x, h, w, &pre, &rr, &mut gp);
        prop_assert!(max_rel_err(&dx, &x, |v| dot(&t.forward(&p, v, h, w).unwrap().0, &rr)) <= 1e-4);
        prop_assert!(max_rel_err(&gp, &p, |v| dot(&t.forward(v, &x, h, w).unwrap().0, &rr)) <= 1e-4);
    }

    #[test]
    fn whole_network(seed in any::<u64>(), n4 in 1usize..3, classes in 2usize..5, label_pick in 0usize..100) {
        let spec = ModelSpec {
            in_channels: 2, input_size: 4 * n4, stem_channels: 4, growth: 2,
            block_layers: [1, 1, 1], bottleneck: 2, se_reduction: 2, n_classes: classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::<f64>::new(spec.clone(), seed).unwrap();
        let x = rand_vec(spec.input_len(), &mut rng);
        // Zero-initialized biases put rectifier inputs exactly on the kink
        // wherever a feature map is all zero; random biases avoid that.
        for v in model.params_mut().iter_mut().filter(|v| **v == 0.0) {
            *v = rng.random_range(-0.1..0.1);
        }
        let label = label_pick % classes;
        let mut g = vec![0.0; model.n_params()];
        model.loss_and_grad(&x, label, &mut g).unwrap();
        let p0 = model.params().to_vec();
        let err = max_rel_err(&g, &p0, |v| {
            model.params_mut().copy_from_slice(v);
            model.loss(&x, label).unwrap()
        });
        prop_assert!(err <= 1e-4, "relative error {err}");
    }
}

#[test]
fn single_conv_layer_gradient_sums_bias_over_positions() {
    let conv = Conv2d::new(1, 1, 3, 1, 1).unwrap();
    let p = vec![0.0; conv.n_params()];
    let x = vec![1.0; 16];
    let mut g = vec![0.0; p.len()];
    conv.backward(&p, &x, 4, 4, &[1.0; 16], &mut g, false);
    assert_eq!(g[9], 16.0);
    assert_eq!(g[4], 16.0);
    assert_eq!(g[0], 9.0);
}
