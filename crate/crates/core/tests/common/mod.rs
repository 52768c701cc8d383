//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numeric code paths: convolution
//! pads the input explicitly, FC is a plain double loop, and the error bound
//! is propagated layer by layer from first principles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use psim_core::model::{LayerSpec, ModelIR, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` values uniform in `[-1, 1)`, each zeroed with probability `zero_p`.
pub fn sparse_values(rng: &mut ChaCha8Rng, n: usize, zero_p: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(zero_p) {
                0.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        })
        .collect()
}

/// Convolution by explicit zero padding followed by a six-deep loop.
pub fn naive_conv(
    x: &[f64],
    [c, h, w]: [usize; 3],
    k: &[f64],
    [oc, _ic, kh, kw]: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 3]) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                padded[ci * ph * pw + (y + pad) * pw + xx + pad] = x[ci * h * w + y * w + xx];
            }
        }
    }
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = k[o * c * kh * kw + ci * kh * kw + ky * kw + kx];
                            let xv = padded[ci * ph * pw + (oy * stride + ky) * pw + ox * stride + kx];
                            acc += kv * xv;
                        }
                    }
                }
                out[o * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    (out, [oc, oh, ow])
}

pub fn naive_fc(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let inp = x.len();
    let mut y = vec![0.0; out];
    for (j, yj) in y.iter_mut().enumerate() {
        for i in 0..inp {
            *yj += w[j * inp + i] * x[i];
        }
    }
    y
}

fn naive_pool(x: &[f64], [c, h, w]: [usize; 3], win: usize, stride: usize) -> (Vec<f64>, [usize; 3]) {
    let oh = (h - win) / stride + 1;
    let ow = (w - win) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..win {
                    for dx in 0..win {
                        m = m.max(x[ci * h * w + (oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, [c, oh, ow])
}

fn shape3(s: &[usize]) -> [usize; 3] {
    match s {
        [c, h, w] => [*c, *h, *w],
        [n] => [*n, 1, 1],
        other => panic!("unexpected activation shape {other:?}"),
    }
}

fn shape4(s: &[usize]) -> [usize; 4] {
    s.try_into().expect("4-D kernel")
}

/// Forward pass built only from the naive kernels above.
pub fn naive_forward(model: &ModelIR, input: &Tensor) -> Vec<f64> {
    let mut x = input.data().to_vec();
    let mut shape = input.shape().to_vec();
    for layer in &model.layers {
        match layer {
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let w = &model.tensors[weight];
                let (mut y, s) = naive_conv(&x, shape3(&shape), w.data(), shape4(w.shape()), *stride, *padding);
                if let Some(b) = bias {
                    let b = model.tensors[b].data();
                    let per = s[1] * s[2];
                    for (i, v) in y.iter_mut().enumerate() {
                        *v += b[i / per];
                    }
                }
                x = y;
                shape = s.to_vec();
            }
            LayerSpec::FullyConnected { weight, bias } => {
                let w = &model.tensors[weight];
                let mut y = naive_fc(&x, w.data(), w.shape()[0]);
                if let Some(b) = bias {
                    for (v, bb) in y.iter_mut().zip(model.tensors[b].data()) {
                        *v += bb;
                    }
                }
                shape = vec![y.len()];
                x = y;
            }
            LayerSpec::BatchNorm { scale, shift } => {
                let (s, t) = (model.tensors[scale].data(), model.tensors[shift].data());
                let per = x.len() / s.len();
                for (i, v) in x.iter_mut().enumerate() {
                    *v = s[i / per] * *v + t[i / per];
                }
            }
            LayerSpec::Relu => {
                for v in &mut x {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                let (y, s) = naive_pool(&x, shape3(&shape), *window, *stride);
                x = y;
                shape = s.to_vec();
            }
        }
    }
    x
}

pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst-case L-infinity deviation of the quantized photonic output from
/// the exact forward pass.
///
/// Per CONV/FC output with scale `s` (1 unless a batch norm follows):
/// `|dy| <= |s| * sum_i [ (|w_i| + dw) * (e + dx) + |x_i| * dw ]` over
/// nonzero weights, where `e` is the incoming error bound,
/// `dw = Mw / (2^bw - 1)` and `dx = (Mx + e) / (2^bx - 1)`. ReLU and
/// max-pool do not increase the bound; a standalone batch norm scales it
/// by `max |scale|`.
pub fn quantization_error_bound(model: &ModelIR, input: &Tensor, weight_bits: u32, act_bits: u32) -> f64 {
    let levels = |b: u32| ((1u64 << b) - 1) as f64;
    let mut x = input.data().to_vec();
    let mut shape = input.shape().to_vec();
    let mut err = 0.0f64;
    let mut i = 0;
    while i < model.layers.len() {
        let layer = &model.layers[i];
        let folded = match (layer, model.layers.get(i + 1)) {
            (LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. }, Some(LayerSpec::BatchNorm { scale, .. })) => {
                Some(model.tensors[scale].data().to_vec())
            }
            _ => None,
        };
        let photonic = match layer {
            LayerSpec::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => Some((weight, Some((*stride, *padding)))),
            LayerSpec::FullyConnected { weight, .. } => Some((weight, None)),
            _ => None,
        };
        if let Some((weight, geometry)) = photonic {
            let w = &model.tensors[weight];
            let mw = w.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
            let mx = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let dw = mw / levels(weight_bits);
            let dx = (mx + err) / levels(act_bits);
            let widened: Vec<f64> = w
                .data()
                .iter()
                .map(|&v| if v == 0.0 { 0.0 } else { v.abs() + dw })
                .collect();
            let step: Vec<f64> = w.data().iter().map(|&v| if v == 0.0 { 0.0 } else { dw }).collect();
            let absx: Vec<f64> = x.iter().map(|v| v.abs()).collect();
            let in_err = vec![err + dx; x.len()];
            // Padding lanes carry exact zeros and contribute no error.
            let (a, b, channels) = match geometry {
                Some((stride, pad)) => {
                    let (s, k) = (shape3(&shape), shape4(w.shape()));
                    let (a, os) = naive_conv(&in_err, s, &widened, k, stride, pad);
                    let (b, _) = naive_conv(&absx, s, &step, k, stride, pad);
                    (a, b, os[0])
                }
                None => {
                    let out = w.shape()[0];
                    (naive_fc(&in_err, &widened, out), naive_fc(&absx, &step, out), out)
                }
            };
            let per = a.len() / channels;
            err = a
                .iter()
                .zip(&b)
                .enumerate()
                .map(|(j, (p, q))| folded.as_ref().map_or(1.0, |s| s[j / per].abs()) * (p + q))
                .fold(0.0, f64::max);
        } else if let LayerSpec::BatchNorm { scale, .. } = layer {
            err *= model.tensors[scale].data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
        // Advance the exact activations through this layer (and a folded BN).
        let upto = if folded.is_some() { i + 2 } else { i + 1 };
        let sub = ModelIR {
            name: String::new(),
            input_shape: shape.clone(),
            layers: model.layers[i..upto].to_vec(),
            tensors: model.tensors.clone(),
        };
        let t = Tensor::new(shape.clone(), x.clone()).unwrap();
        x = naive_forward(&sub, &t);
        shape = sub
            .validate()
            .expect("sub-model of a valid model")
            .last()
            .expect("non-empty")
            .clone();
        i = upto;
    }
    err
}

/// Optimal 1-D k-means by trying every split of the sorted values into at
/// most `k` contiguous groups. Returns (sse, centroids).
pub fn kmeans_exhaustive(values: &[f64], k: usize) -> (f64, Vec<f64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut best = (f64::INFINITY, Vec::new());
    // Each bit of `cuts` marks a boundary after position i.
    for cuts in 0u64..(1 << (n - 1)) {
        if cuts.count_ones() as usize + 1 > k {
            continue;
        }
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || cuts & (1 << i) != 0 {
                groups.push(&v[start..=i]);
                start = i + 1;
            }
        }
        let mut sse = 0.0;
        let mut cents = Vec::new();
        for g in groups {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            sse += g.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
            cents.push(mean);
        }
        if sse < best.0 {
            best = (sse, cents);
        }
    }
    best
}

/// Type-7 empirical quantile straight from the definition.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
