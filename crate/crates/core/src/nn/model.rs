use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{cross_entropy, relu_backward_in_place, relu_in_place, softmax, Conv2d, DenseBlock, DenseCache, Head, Se, SeCache, Transition};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng;

/// Network shape: stem conv, SE, three dense blocks separated by
/// transitions, SE, global pool and a linear head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub in_channels: usize,
    /// Input height and width; must be divisible by 4.
    pub input_size: usize,
    pub stem_channels: usize,
    pub growth: usize,
    pub block_layers: [usize; 3],
    /// Bottleneck width as a multiple of `growth`.
    pub bottleneck: usize,
    pub se_reduction: usize,
    pub n_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            in_channels: 4,
            input_size: 60,
            stem_channels: 16,
            growth: 8,
            block_layers: [2, 2, 2],
            bottleneck: 4,
            se_reduction: 4,
            n_classes: 5,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 4 || self.input_size % 4 != 0 {
            return Err(Error::param("model.input_size", format!("must be a positive multiple of 4, got {}", self.input_size)));
        }
        if self.n_classes < 2 {
            return Err(Error::param("model.n_classes", format!("need at least 2 classes, got {}", self.n_classes)));
        }
        for (field, v) in [
            ("model.in_channels", self.in_channels),
            ("model.stem_channels", self.stem_channels),
            ("model.growth", self.growth),
            ("model.bottleneck", self.bottleneck),
            ("model.se_reduction", self.se_reduction),
        ] {
            if v == 0 {
                return Err(Error::param(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_size * self.input_size
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Convolution followed by a rectifier.
    Stem(Conv2d),
    Se(Se),
    Dense(DenseBlock),
    Transition(Transition),
    Head(Head),
}

impl Layer {
    pub fn n_params(&self) -> usize {
        match self {
            Layer::Stem(c) => c.n_params(),
            Layer::Se(s) => s.n_params(),
            Layer::Dense(d) => d.n_params(),
            Layer::Transition(t) => t.n_params(),
            Layer::Head(h) => h.n_params(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub layer: Layer,
    pub params: Range<usize>,
    /// `(channels, height, width)` entering the layer.
    pub input: (usize, usize, usize),
    /// Output shape; the head reports `(classes, 1, 1)`.
    pub output: (usize, usize, usize),
}

pub fn build_layers(spec: &ModelSpec) -> Result<Vec<LayerEntry>> {
    spec.validate()?;
    let n = spec.input_size;
    let mut layers = Vec::new();
    let mut shape = (spec.in_channels, n, n);
    let mut off = 0;
    let mut push = |name: &str, layer: Layer, out: (usize, usize, usize), shape: &mut (usize, usize, usize)| {
        let len = layer.n_params();
        layers.push(LayerEntry { name: name.into(), layer, params: off..off + len, input: *shape, output: out });
        off += len;
        *shape = out;
    };
    let stem = Conv2d::new(spec.in_channels, spec.stem_channels, 3, 1, 1)?;
    push("stem", Layer::Stem(stem), (spec.stem_channels, n, n), &mut shape);
    push("se1", Layer::Se(Se::new(shape.0, spec.se_reduction)?), shape, &mut shape);
    for (b, &count) in spec.block_layers.iter().enumerate() {
        let dense = DenseBlock::new(shape.0, count, spec.growth, spec.bottleneck * spec.growth)?;
        let out = (dense.out_channels(), shape.1, shape.2);
        push(&format!("dense{}", b + 1), Layer::Dense(dense), out, &mut shape);
        if b < 2 {
            let t = Transition::new(shape.0, (shape.0 / 2).max(1))?;
            let out = (t.conv.out_channels, shape.1 / 2, shape.2 / 2);
            push(&format!("transition{}", b + 1), Layer::Transition(t), out, &mut shape);
        }
    }
    push("se2", Layer::Se(Se::new(shape.0, spec.se_reduction)?), shape, &mut shape);
    let head = Head { channels: shape.0, classes: spec.n_classes };
    push("head", Layer::Head(head), (spec.n_classes, 1, 1), &mut shape);
    Ok(layers)
}

/// Affine map applied to raw inputs before the stem: `(x - shift) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: f64,
    pub scale: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm { shift: 0.0, scale: 1.0 }
    }
}

enum Cache<T> {
    None,
    Se(SeCache<T>),
    Dense(DenseCache<T>),
    PrePool(Vec<T>),
}

struct Tape<T> {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<T>>,
    caches: Vec<Cache<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<LayerEntry>,
    params: Vec<T>,
    pub input_norm: InputNorm,
}

impl<T: Real> Model<T> {
    /// Fan-in-scaled uniform initialization from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let layers = build_layers(&spec)?;
        let mut params = vec![T::zero(); layers.last().map_or(0, |l| l.params.end)];
        for (i, entry) in layers.iter().enumerate() {
            let mut r = rng::stream(seed, &[i as u64]);
            let p = &mut params[entry.params.clone()];
            match &entry.layer {
                Layer::Stem(c) => c.init(p, &mut r),
                Layer::Se(s) => s.init(p, &mut r),
                Layer::Dense(d) => d.init(p, &mut r),
                Layer::Transition(t) => t.init(p, &mut r),
                Layer::Head(h) => h.init(p, &mut r),
            }
        }
        Ok(Model { spec, layers, params, input_norm: InputNorm::default() })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<T>, input_norm: InputNorm) -> Result<Self> {
        let layers = build_layers(&spec)?;
        let want = layers.last().map_or(0, |l| l.params.end);
        if params.len() != want {
            return Err(Error::ShapeMismatch(format!("spec needs {want} parameters, got {}", params.len())));
        }
        Ok(Model { spec, layers, params, input_norm })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerEntry] {
        &self.layers
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            input_norm: self.input_norm,
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{}x{} = {} inputs, got {}",
                self.spec.in_channels,
                self.spec.input_size,
                self.spec.input_size,
                self.spec.input_len(),
                x.len()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[T]) -> Result<Tape<T>> {
        self.check_input(x)?;
        let shift = T::lit(self.input_norm.shift);
        let scale = T::lit(self.input_norm.scale);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(x.iter().map(|v| (*v - shift) * scale).collect::<Vec<T>>());
        for e in &self.layers {
            let p = &self.params[e.params.clone()];
            let input = acts.last().expect("input pushed above");
            let (_, h, w) = e.input;
            let (out, cache) = match &e.layer {
                Layer::Stem(c) => {
                    let mut y = c.forward(p, input, h, w);
                    relu_in_place(&mut y);
                    (y, Cache::None)
                }
                Layer::Se(s) => {
                    let (y, c) = s.forward(p, input, h * w);
                    (y, Cache::Se(c))
                }
                Layer::Dense(d) => {
                    let (y, c) = d.forward(p, input, h, w);
                    (y, Cache::Dense(c))
                }
                Layer::Transition(t) => {
                    let (y, pre) = t.forward(p, input, h, w)?;
                    (y, Cache::PrePool(pre))
                }
                Layer::Head(hd) => (hd.forward(p, input, h * w), Cache::None),
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Tape { acts, caches })
    }

    fn backprop(&self, tape: &Tape<T>, dlogits: Vec<T>, grad: &mut [T]) {
        let mut d = dlogits;
        for (i, e) in self.layers.iter().enumerate().rev() {
            let p = &self.params[e.params.clone()];
            let g = &mut grad[e.params.clone()];
            let input = &tape.acts[i];
            let output = &tape.acts[i + 1];
            let (_, h, w) = e.input;
            d = match (&e.layer, &tape.caches[i]) {
                (Layer::Stem(c), _) => {
                    relu_backward_in_place(output, &mut d);
                    c.backward(p, input, h, w, &d, g, i > 0)
                }
                (Layer::Se(s), Cache::Se(cache)) => s.backward(p, input, h * w, cache, &d, g),
                (Layer::Dense(db), Cache::Dense(cache)) => db.backward(p, output, h, w, cache, &d, g),
                (Layer::Transition(t), Cache::PrePool(pre)) => t.backward(p, input, h, w, pre, &d, g),
                (Layer::Head(hd), _) => hd.backward(p, input, h * w, &d, g),
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.run(x)?.acts.pop().expect("logits"))
    }

    /// Class probabilities for one `C x N x N` input.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// `batch: [B, C, N, N]` to `[B, classes]` probabilities.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let per = self.spec.input_len();
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != [self.spec.in_channels, self.spec.input_size, self.spec.input_size] {
            return Err(Error::ShapeMismatch(format!(
                "batch must be [B, {}, {}, {}], got {shape:?}",
                self.spec.in_channels, self.spec.input_size, self.spec.input_size
            )));
        }
        let rows = batch.data().par_chunks(per).map(|x| self.predict(x)).collect::<Result<Vec<_>>>()?;
        Tensor::new(&[shape[0], self.spec.n_classes], rows.concat())
    }

    /// Cross-entropy loss for one sample; parameter gradients are added to `grad`.
    pub fn loss_and_grad(&self, x: &[T], label: usize, grad: &mut [T]) -> Result<(T, Vec<T>)> {
        if label >= self.spec.n_classes {
            return Err(Error::LabelOutOfRange { label, classes: self.spec.n_classes });
        }
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!("gradient buffer {} != {} parameters", grad.len(), self.params.len())));
        }
        let tape = self.run(x)?;
        let logits = tape.acts.last().expect("logits").clone();
        let (loss, dlogits) = cross_entropy(&logits, label);
        self.backprop(&tape, dlogits, grad);
        Ok((loss, logits))
    }

    pub fn loss(&self, x: &[T], label: usize) -> Result<T> {
        if label >= self.spec.n_classes {
            return Err(Error::LabelOutOfRange { label, classes: self.spec.n_classes });
        }
        Ok(cross_entropy(&self.logits(x)?, label).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelSpec {
        ModelSpec { in_channels: 2, input_size: 8, stem_channels: 4, growth: 2, block_layers: [1, 1, 1], bottleneck: 2, se_reduction: 2, n_classes: 3 }
    }

    #[test]
    fn spatial_bookkeeping_halves_twice() {
        for n in [8, 60, 224, 240] {
            let layers = build_layers(&ModelSpec { input_size: n, ..Default::default() }).unwrap();
            let sizes: Vec<usize> = layers.iter().filter(|l| l.name != "head").map(|l| l.output.1).collect();
            assert_eq!(sizes, vec![n, n, n, n / 2, n / 2, n / 4, n / 4, n / 4], "N = {n}");
        }
        assert!(build_layers(&ModelSpec { input_size: 30, ..Default::default() }).is_err());
    }

    #[test]
    fn default_channel_plan() {
        let layers = build_layers(&ModelSpec::default()).unwrap();
        let chans: Vec<usize> = layers.iter().map(|l| l.output.0).collect();
        assert_eq!(chans, vec![16, 16, 32, 16, 32, 16, 32, 32, 5]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = Model::<f64>::new(tiny(), 3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..4 * 2 * 64).map(|_| r.random_range(-2.0..2.0)).collect();
        let probs = m.forward(&Tensor::new(&[4, 2, 8, 8], data).unwrap()).unwrap();
        assert_eq!(probs.shape(), [4, 3]);
        for row in probs.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(m.forward(&Tensor::zeros(&[1, 2, 4, 4])).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_prediction() {
        let mut m = Model::<f64>::new(tiny(), 3).unwrap();
        let head = m.layers().last().unwrap().params.clone();
        m.params_mut()[head].fill(0.0);
        let x = vec![0.5; tiny().input_len()];
        let p = m.predict(&x).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!((m.loss(&x, 1).unwrap() - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::<f32>::new(tiny(), 11).unwrap();
        assert_eq!(a, Model::<f32>::new(tiny(), 11).unwrap());
        assert_ne!(a.params(), Model::<f32>::new(tiny(), 12).unwrap().params());
    }

    #[test]
    fn rejects_bad_label() {
        let m = Model::<f64>::new(tiny(), 0).unwrap();
        let mut g = vec![0.0; m.n_params()];
        let x = vec![0.0; tiny().input_len()];
        assert!(matches!(m.loss_and_grad(&x, 3, &mut g), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
    }
}
