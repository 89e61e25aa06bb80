//! Layer kernels. Every layer reads its parameters from a flat slice
//! (weights first, then biases) and accumulates parameter gradients into a
//! slice of the same length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{gemm_nn, gemm_nt};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::num::Real;

fn uniform_fill<T: Real, R: Rng>(p: &mut [T], bound: f64, rng: &mut R) {
    for v in p {
        *v = T::lit(rng.random_range(-bound..=bound));
    }
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` wherever the rectifier output `y` was not positive.
pub fn relu_backward_in_place<T: Real>(y: &[T], dy: &mut [T]) {
    for (g, v) in dy.iter_mut().zip(y) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv {in_channels}->{out_channels} k{kernel} s{stride}: sizes must be positive"
            )));
        }
        Ok(Conv2d { in_channels, out_channels, kernel, stride, pad })
    }

    pub fn n_weights(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.out_channels
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} input with pad {} is smaller than the {}x{} kernel",
                self.pad, self.kernel, self.kernel
            )));
        }
        Ok(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }

    pub fn init<T: Real, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let (w, b) = p.split_at_mut(self.n_weights());
        uniform_fill(w, (6.0 / fan_in).sqrt(), rng);
        b.fill(T::zero());
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Real>(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let ohw = oh * ow;
        let mut col = vec![T::zero(); self.in_channels * k * k * ohw];
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let k = self.kernel;
        let ohw = oh * ow;
        let mut dx = vec![T::zero(); self.in_channels * h * w];
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[((c * k + ky) * k + kx) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &mut plane[iy as usize * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Zero-padded copy of `x` in which every channel plane is followed by
    /// `kernel - 1` spare zeros, so that each kernel tap reads one contiguous
    /// run of the padded image. Returns the buffer and its channel stride.
    fn pad_planes<T: Real>(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, usize) {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        let stride = hp * wp + self.kernel - 1;
        let mut xp = vec![T::zero(); self.in_channels * stride];
        for c in 0..self.in_channels {
            for r in 0..h {
                let dst = c * stride + (r + self.pad) * wp + self.pad;
                xp[dst..dst + w].copy_from_slice(&x[(c * h + r) * w..][..w]);
            }
        }
        (xp, stride)
    }

    /// Stride-1 convolution as one small matrix product per kernel tap over
    /// shifted views of the padded input. Output rows are `wp` wide; the
    /// trailing `kernel - 1` columns of each row are scratch.
    fn forward_shifted<T: Real>(&self, weights: &[T], x: &[T], h: usize, w: usize) -> Vec<T> {
        let k = self.kernel;
        let (kk, ckk) = (k * k, self.in_channels * k * k);
        let wp = w + 2 * self.pad;
        let (oh, _) = self.out_size(h, w).expect("checked");
        let n = oh * wp;
        let (xp, stride) = self.pad_planes(x, h, w);
        let mut wide = vec![T::zero(); self.out_channels * n];
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let off = ky * wp + kx;
                gemm_nn(self.out_channels, self.in_channels, n, &weights[tap..], (ckk, kk), &xp[off..], stride, &mut wide, n);
            }
        }
        wide
    }

    /// Cross-correlation of a `[in, h, w]` input; returns `[out, oh, ow]`.
    pub fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.out_size(h, w).expect("conv input checked by caller");
        let ohw = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let (weights, bias) = p.split_at(self.n_weights());
        if self.is_pointwise() {
            let mut y = Vec::with_capacity(self.out_channels * ohw);
            for b in bias {
                y.extend(std::iter::repeat_n(*b, ohw));
            }
            gemm_nn(self.out_channels, ckk, ohw, weights, (ckk, 1), x, ohw, &mut y, ohw);
            return y;
        }
        if self.stride == 1 {
            let wp = w + 2 * self.pad;
            let wide = self.forward_shifted(weights, x, h, w);
            let mut y = Vec::with_capacity(self.out_channels * ohw);
            for (o, b) in bias.iter().enumerate() {
                for r in 0..oh {
                    y.extend(wide[(o * oh + r) * wp..][..ow].iter().map(|v| *v + *b));
                }
            }
            return y;
        }
        let mut y = Vec::with_capacity(self.out_channels * ohw);
        for b in bias {
            y.extend(std::iter::repeat_n(*b, ohw));
        }
        let col = self.im2col(x, h, w, oh, ow);
        gemm_nn(self.out_channels, ckk, ohw, weights, (ckk, 1), &col, ohw, &mut y, ohw);
        y
    }

    /// Accumulates weight and bias gradients into `grad`; returns the input
    /// gradient when `need_dx` is set (otherwise an empty vector).
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize, dy: &[T], grad: &mut [T], need_dx: bool) -> Vec<T> {
        let (oh, ow) = self.out_size(h, w).expect("conv input checked by caller");
        let ohw = oh * ow;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let weights = &p[..self.n_weights()];
        let (gw, gb) = grad.split_at_mut(self.n_weights());
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dy[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
        }
        if self.stride == 1 && !self.is_pointwise() {
            return self.backward_shifted(weights, x, h, w, dy, gw, need_dx);
        }
        let owned;
        let col: &[T] = if self.is_pointwise() {
            x
        } else {
            owned = self.im2col(x, h, w, oh, ow);
            &owned
        };
        gemm_nt(self.out_channels, ckk, ohw, dy, ohw, col, ohw, gw, (ckk, 1));
        if !need_dx {
            return Vec::new();
        }
        let mut dcol = vec![T::zero(); ckk * ohw];
        gemm_nn(ckk, self.out_channels, ohw, weights, (1, ckk), dy, ohw, &mut dcol, ohw);
        if self.is_pointwise() {
            dcol
        } else {
            self.col2im(&dcol, h, w, oh, ow)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_shifted<T: Real>(&self, weights: &[T], x: &[T], h: usize, w: usize, dy: &[T], gw: &mut [T], need_dx: bool) -> Vec<T> {
        let k = self.kernel;
        let (kk, ckk) = (k * k, self.in_channels * k * k);
        let wp = w + 2 * self.pad;
        let (oh, ow) = self.out_size(h, w).expect("checked");
        let n = oh * wp;
        let mut wide = vec![T::zero(); self.out_channels * n];
        for o in 0..self.out_channels {
            for r in 0..oh {
                wide[(o * oh + r) * wp..][..ow].copy_from_slice(&dy[(o * oh + r) * ow..][..ow]);
            }
        }
        let (xp, stride) = self.pad_planes(x, h, w);
        let mut dxp = if need_dx { vec![T::zero(); self.in_channels * stride] } else { Vec::new() };
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let off = ky * wp + kx;
                gemm_nt(self.out_channels, self.in_channels, n, &wide, n, &xp[off..], stride, &mut gw[tap..], (ckk, kk));
                if need_dx {
                    gemm_nn(self.in_channels, self.out_channels, n, &weights[tap..], (kk, ckk), &wide, n, &mut dxp[off..], stride);
                }
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dx = Vec::with_capacity(self.in_channels * h * w);
        for c in 0..self.in_channels {
            for r in 0..h {
                dx.extend_from_slice(&dxp[c * stride + (r + self.pad) * wp + self.pad..][..w]);
            }
        }
        dx
    }
}

fn conv_from_weights<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: &[T], stride: usize, pad: usize) -> Result<(Conv2d, Vec<T>)> {
    let (c, _, _) = x.chw()?;
    let (o, wc, kh, kw) = match weights.shape()[..] {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => return Err(Error::ShapeMismatch(format!("weights must be [O, C, k, k], got {:?}", weights.shape()))),
    };
    if wc != c {
        return Err(Error::ShapeMismatch(format!("input has {c} channels, weights expect {wc}")));
    }
    if kh != kw {
        return Err(Error::ShapeMismatch(format!("kernel must be square, got {kh}x{kw}")));
    }
    if bias.len() != o {
        return Err(Error::ShapeMismatch(format!("{o} output channels but {} biases", bias.len())));
    }
    let conv = Conv2d::new(c, o, kh, stride, pad)?;
    let mut p = weights.data().to_vec();
    p.extend_from_slice(bias);
    Ok((conv, p))
}

/// `x: [C, H, W]`, `weights: [O, C, k, k]`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: &[T], stride: usize, pad: usize) -> Result<Tensor<T>> {
    let (conv, p) = conv_from_weights(x, weights, bias, stride, pad)?;
    let (_, h, w) = x.chw()?;
    let (oh, ow) = conv.out_size(h, w)?;
    Tensor::new(&[conv.out_channels, oh, ow], conv.forward(&p, x.data(), h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (conv, p) = conv_from_weights(x, weights, bias, stride, pad)?;
    let (_, h, w) = x.chw()?;
    let (oh, ow) = conv.out_size(h, w)?;
    if dy.shape() != [conv.out_channels, oh, ow] {
        return Err(Error::ShapeMismatch(format!("dy is {:?}, output is {:?}", dy.shape(), [conv.out_channels, oh, ow])));
    }
    let mut grad = vec![T::zero(); conv.n_params()];
    let dx = conv.backward(&p, x.data(), h, w, dy.data(), &mut grad, true);
    let db = grad.split_off(conv.n_weights());
    Ok(ConvGrads { dx: Tensor::new(x.shape(), dx)?, dw: Tensor::new(weights.shape(), grad)?, db })
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("2x2 pooling needs even spatial dims, got {h}x{w}")));
    }
    Ok(())
}

pub(crate) fn avgpool2_raw<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut y = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..];
        for i in 0..oh {
            for j in 0..ow {
                let a = p[2 * i * w + 2 * j] + p[2 * i * w + 2 * j + 1];
                let b = p[(2 * i + 1) * w + 2 * j] + p[(2 * i + 1) * w + 2 * j + 1];
                y.push((a + b) * quarter);
            }
        }
    }
    y
}

pub(crate) fn avgpool2_backward_raw<T: Real>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let g = dy[(ch * oh + i) * ow + j] * quarter;
                let base = ch * h * w;
                dx[base + 2 * i * w + 2 * j] = g;
                dx[base + 2 * i * w + 2 * j + 1] = g;
                dx[base + (2 * i + 1) * w + 2 * j] = g;
                dx[base + (2 * i + 1) * w + 2 * j + 1] = g;
            }
        }
    }
    dx
}

/// 2x2 average pooling with stride 2.
pub fn avgpool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    check_even(h, w)?;
    Tensor::new(&[c, h / 2, w / 2], avgpool2_raw(x.data(), c, h, w))
}

pub fn avgpool2_backward<T: Real>(dy: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let (c, h, w) = match input_shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::ShapeMismatch(format!("expected [C, H, W], got {input_shape:?}"))),
    };
    check_even(h, w)?;
    if dy.shape() != [c, h / 2, w / 2] {
        return Err(Error::ShapeMismatch(format!("dy is {:?}, pooled input is {:?}", dy.shape(), [c, h / 2, w / 2])));
    }
    Tensor::new(input_shape, avgpool2_backward_raw(dy.data(), c, h, w))
}

/// Squeeze-and-excitation: per-channel global mean, FC(C -> C/r), rectifier,
/// FC(C/r -> C), sigmoid gate, channel rescale.
///
/// Parameter order: `w1 [hidden, C]`, `b1`, `w2 [C, hidden]`, `b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Se {
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub struct SeCache<T> {
    squeeze: Vec<T>,
    hidden: Vec<T>,
    gate: Vec<T>,
}

impl Se {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 {
            return Err(Error::param("se_reduction", "must be >= 1"));
        }
        let hidden = channels / reduction;
        if hidden == 0 {
            return Err(Error::ShapeMismatch(format!("SE with {channels} channels and reduction {reduction} has no hidden units")));
        }
        Ok(Se { channels, hidden })
    }

    pub fn n_params(&self) -> usize {
        2 * self.channels * self.hidden + self.hidden + self.channels
    }

    fn split<'a, T>(&self, p: &'a [T]) -> (&'a [T], &'a [T], &'a [T], &'a [T]) {
        let (w1, rest) = p.split_at(self.hidden * self.channels);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.channels * self.hidden);
        (w1, b1, w2, b2)
    }

    pub fn init<T: Real, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        let (c, hd) = (self.channels, self.hidden);
        let (w1, rest) = p.split_at_mut(hd * c);
        let (b1, rest) = rest.split_at_mut(hd);
        let (w2, b2) = rest.split_at_mut(c * hd);
        uniform_fill(w1, (6.0 / c as f64).sqrt(), rng);
        b1.fill(T::zero());
        uniform_fill(w2, (3.0 / hd as f64).sqrt(), rng);
        b2.fill(T::zero());
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], hw: usize) -> (Vec<T>, SeCache<T>) {
        let (w1, b1, w2, b2) = self.split(p);
        let (c, hd) = (self.channels, self.hidden);
        let inv = T::one() / T::lit(hw as f64);
        let squeeze: Vec<T> = (0..c).map(|ch| x[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv).collect();
        let hidden: Vec<T> = (0..hd)
            .map(|j| {
                let z = b1[j] + (0..c).map(|i| w1[j * c + i] * squeeze[i]).sum::<T>();
                z.max(T::zero())
            })
            .collect();
        let gate: Vec<T> = (0..c)
            .map(|i| sigmoid(b2[i] + (0..hd).map(|j| w2[i * hd + j] * hidden[j]).sum::<T>()))
            .collect();
        let mut y = x.to_vec();
        for (ch, g) in gate.iter().enumerate() {
            y[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v *= *g);
        }
        (y, SeCache { squeeze, hidden, gate })
    }

    pub fn backward<T: Real>(&self, p: &[T], x: &[T], hw: usize, cache: &SeCache<T>, dy: &[T], grad: &mut [T]) -> Vec<T> {
        let (_, _, w2, _) = self.split(p);
        let w1 = &p[..self.hidden * self.channels];
        let (c, hd) = (self.channels, self.hidden);
        let (gw1, rest) = grad.split_at_mut(hd * c);
        let (gb1, rest) = rest.split_at_mut(hd);
        let (gw2, gb2) = rest.split_at_mut(c * hd);

        let mut dx = vec![T::zero(); c * hw];
        let mut dz2 = vec![T::zero(); c];
        for ch in 0..c {
            let range = ch * hw..(ch + 1) * hw;
            let dgate: T = dy[range.clone()].iter().zip(&x[range.clone()]).map(|(a, b)| *a * *b).sum();
            let g = cache.gate[ch];
            dz2[ch] = dgate * g * (T::one() - g);
            for (d, u) in dx[range.clone()].iter_mut().zip(&dy[range]) {
                *d = *u * g;
            }
        }
        let mut dz1 = vec![T::zero(); hd];
        for i in 0..c {
            gb2[i] += dz2[i];
            for j in 0..hd {
                gw2[i * hd + j] += dz2[i] * cache.hidden[j];
                dz1[j] += w2[i * hd + j] * dz2[i];
            }
        }
        for j in 0..hd {
            if cache.hidden[j] <= T::zero() {
                dz1[j] = T::zero();
            }
        }
        let inv = T::one() / T::lit(hw as f64);
        for j in 0..hd {
            gb1[j] += dz1[j];
            for i in 0..c {
                gw1[j * c + i] += dz1[j] * cache.squeeze[i];
            }
        }
        for i in 0..c {
            let ds: T = (0..hd).map(|j| w1[j * c + i] * dz1[j]).sum::<T>() * inv;
            dx[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v += ds);
        }
        dx
    }
}

/// Stack of (1x1 conv to `bottleneck` channels, rectifier, 3x3 conv to
/// `growth` channels, rectifier) layers whose outputs are appended to the
/// running feature stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub in_channels: usize,
    pub growth: usize,
    pub layers: Vec<(Conv2d, Conv2d)>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    bottlenecks: Vec<Vec<T>>,
}

impl DenseBlock {
    pub fn new(in_channels: usize, n_layers: usize, growth: usize, bottleneck: usize) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| {
                let c = in_channels + i * growth;
                Ok((Conv2d::new(c, bottleneck, 1, 1, 0)?, Conv2d::new(bottleneck, growth, 3, 1, 1)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DenseBlock { in_channels, growth, layers })
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|(a, b)| a.n_params() + b.n_params()).sum()
    }

    pub fn init<T: Real, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        let mut off = 0;
        for (a, b) in &self.layers {
            a.init(&mut p[off..off + a.n_params()], rng);
            off += a.n_params();
            b.init(&mut p[off..off + b.n_params()], rng);
            off += b.n_params();
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> (Vec<T>, DenseCache<T>) {
        let hw = h * w;
        let mut stack = Vec::with_capacity(self.out_channels() * hw);
        stack.extend_from_slice(x);
        let mut bottlenecks = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for (a, b) in &self.layers {
            let pa = &p[off..off + a.n_params()];
            off += a.n_params();
            let pb = &p[off..off + b.n_params()];
            off += b.n_params();
            let mut mid = a.forward(pa, &stack, h, w);
            relu_in_place(&mut mid);
            let mut new = b.forward(pb, &mid, h, w);
            relu_in_place(&mut new);
            stack.extend_from_slice(&new);
            bottlenecks.push(mid);
        }
        (stack, DenseCache { bottlenecks })
    }

    /// `y` is the block output returned by `forward`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(&self, p: &[T], y: &[T], h: usize, w: usize, cache: &DenseCache<T>, dy: &[T], grad: &mut [T]) -> Vec<T> {
        let hw = h * w;
        let mut dstack = dy.to_vec();
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for (a, b) in &self.layers {
            offsets.push(off);
            off += a.n_params() + b.n_params();
        }
        for (i, (a, b)) in self.layers.iter().enumerate().rev() {
            let c_in = a.in_channels;
            let new_range = c_in * hw..(c_in + self.growth) * hw;
            let mut dnew = dstack[new_range.clone()].to_vec();
            relu_backward_in_place(&y[new_range], &mut dnew);
            let (pa, pb) = p[offsets[i]..].split_at(a.n_params());
            let (ga, gb) = grad[offsets[i]..].split_at_mut(a.n_params());
            let mid = &cache.bottlenecks[i];
            let mut dmid = b.backward(&pb[..b.n_params()], mid, h, w, &dnew, &mut gb[..b.n_params()], true);
            relu_backward_in_place(mid, &mut dmid);
            let din = a.backward(pa, &y[..c_in * hw], h, w, &dmid, ga, true);
            for (d, v) in dstack[..c_in * hw].iter_mut().zip(din) {
                *d += v;
            }
        }
        dstack.truncate(self.in_channels * hw);
        dstack
    }
}

/// 1x1 conv, rectifier, 2x2 average pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub conv: Conv2d,
}

impl Transition {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Transition { conv: Conv2d::new(in_channels, out_channels, 1, 1, 0)? })
    }

    pub fn n_params(&self) -> usize {
        self.conv.n_params()
    }

    pub fn init<T: Real, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        self.conv.init(p, rng)
    }

    /// Returns the pooled output and the pre-pool activation.
    pub fn forward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize) -> Result<(Vec<T>, Vec<T>)> {
        check_even(h, w)?;
        let mut z = self.conv.forward(p, x, h, w);
        relu_in_place(&mut z);
        Ok((avgpool2_raw(&z, self.conv.out_channels, h, w), z))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(&self, p: &[T], x: &[T], h: usize, w: usize, pre_pool: &[T], dy: &[T], grad: &mut [T]) -> Vec<T> {
        let mut dz = avgpool2_backward_raw(dy, self.conv.out_channels, h, w);
        relu_backward_in_place(pre_pool, &mut dz);
        self.conv.backward(p, x, h, w, &dz, grad, true)
    }
}

/// Global average pool followed by a fully connected layer.
/// Parameter order: `w [classes, C]`, `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub channels: usize,
    pub classes: usize,
}

impl Head {
    pub fn n_params(&self) -> usize {
        self.classes * self.channels + self.classes
    }

    pub fn init<T: Real, R: Rng>(&self, p: &mut [T], rng: &mut R) {
        let (w, b) = p.split_at_mut(self.classes * self.channels);
        uniform_fill(w, (3.0 / self.channels as f64).sqrt(), rng);
        b.fill(T::zero());
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &[T], hw: usize) -> Vec<T> {
        let c = self.channels;
        let inv = T::one() / T::lit(hw as f64);
        let pooled: Vec<T> = (0..c).map(|ch| x[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv).collect();
        let (w, b) = p.split_at(self.classes * c);
        (0..self.classes).map(|k| b[k] + (0..c).map(|i| w[k * c + i] * pooled[i]).sum::<T>()).collect()
    }

    pub fn backward<T: Real>(&self, p: &[T], x: &[T], hw: usize, dlogits: &[T], grad: &mut [T]) -> Vec<T> {
        let c = self.channels;
        let inv = T::one() / T::lit(hw as f64);
        let pooled: Vec<T> = (0..c).map(|ch| x[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv).collect();
        let w = &p[..self.classes * c];
        let (gw, gb) = grad.split_at_mut(self.classes * c);
        let mut dpooled = vec![T::zero(); c];
        for k in 0..self.classes {
            gb[k] += dlogits[k];
            for i in 0..c {
                gw[k * c + i] += dlogits[k] * pooled[i];
                dpooled[i] += w[k * c + i] * dlogits[k];
            }
        }
        let mut dx = vec![T::zero(); c * hw];
        for i in 0..c {
            let g = dpooled[i] * inv;
            dx[i * hw..(i + 1) * hw].iter_mut().for_each(|v| *v = g);
        }
        dx
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|v| (*v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|v| (*v - m).exp()).sum::<T>().ln();
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    (lse - logits[label], grad)
}
