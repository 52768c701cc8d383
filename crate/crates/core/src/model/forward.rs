//! Exact real-arithmetic forward pass. Every photonic-path result is checked
//! against this.

use super::ir::{conv_extent, LayerSpec, ModelIR};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Runs the model on `input` without any quantization.
pub fn reference_forward(model: &ModelIR, input: &Tensor) -> Result<Tensor> {
    let mut trace = reference_trace(model, input)?;
    Ok(trace.pop().expect("validated model has at least one layer"))
}

/// Like [`reference_forward`] but returns the output of every layer.
pub fn reference_trace(model: &ModelIR, input: &Tensor) -> Result<Vec<Tensor>> {
    model.validate()?;
    if input.shape() != model.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "input shape {:?} does not match model input {:?}",
            input.shape(),
            model.input_shape
        )));
    }
    let mut outputs: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let x = outputs.last().unwrap_or(input);
        let y = apply_layer(model, layer, x)?;
        outputs.push(y);
    }
    Ok(outputs)
}

fn apply_layer(model: &ModelIR, layer: &LayerSpec, x: &Tensor) -> Result<Tensor> {
    let bias = |name: Option<&str>| -> Result<Option<&[f64]>> {
        name.map(|b| model.tensor(b).map(Tensor::data)).transpose()
    };
    match layer {
        LayerSpec::Conv2d {
            weight,
            bias: b,
            stride,
            padding,
        } => conv2d(x, model.tensor(weight)?, bias(b.as_deref())?, *stride, *padding),
        LayerSpec::FullyConnected { weight, bias: b } => {
            fully_connected(x, model.tensor(weight)?, bias(b.as_deref())?)
        }
        LayerSpec::BatchNorm { scale, shift } => Ok(batch_norm(
            x,
            model.tensor(scale)?.data(),
            model.tensor(shift)?.data(),
        )),
        LayerSpec::Relu => Ok(relu(x)),
        LayerSpec::MaxPool { window, stride } => max_pool(x, *window, *stride),
    }
}

/// Direct (sliding-window) convolution.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (&[c, h, w], &[oc, ic, kh, kw]) = (x.shape(), weight.shape()) else {
        return Err(Error::Shape(format!(
            "conv2d expects (C,H,W) input and 4-D weight, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    };
    if c != ic {
        return Err(Error::Shape(format!("conv2d channel mismatch {c} vs {ic}")));
    }
    let oh = conv_extent(h, kh, stride, padding).map_err(Error::Shape)?;
    let ow = conv_extent(w, kw, stride, padding).map_err(Error::Shape)?;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += wd[((o * c + ci) * kh + ky) * kw + kx]
                                * xd[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b[o];
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], out)
}

pub fn fully_connected(x: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let &[out, inp] = weight.shape() else {
        return Err(Error::Shape(format!("fc weight must be 2-D, got {:?}", weight.shape())));
    };
    if x.len() != inp {
        return Err(Error::Shape(format!("fc expects {inp} inputs, got {}", x.len())));
    }
    let xd = x.data();
    let y = weight
        .data()
        .chunks_exact(inp)
        .enumerate()
        .map(|(j, row)| {
            let dot: f64 = row.iter().zip(xd).map(|(w, v)| w * v).sum();
            dot + bias.map_or(0.0, |b| b[j])
        })
        .collect();
    Tensor::new(vec![out], y)
}

/// `scale[c] * x + shift[c]`, channel taken from the leading dimension.
pub fn batch_norm(x: &Tensor, scale: &[f64], shift: &[f64]) -> Tensor {
    let ch = x.shape()[0];
    let per = x.len() / ch;
    let mut y = x.clone();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        let c = i / per;
        *v = scale[c] * *v + shift[c];
    }
    y
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        // Normalize -0.0 so zero tests and serialized bytes agree.
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    y
}

pub fn max_pool(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Shape(format!("maxpool expects (C,H,W), got {:?}", x.shape())));
    };
    if window == 0 || stride == 0 || h < window || w < window {
        return Err(Error::Shape(format!(
            "maxpool window {window}/stride {stride} invalid for {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..window {
                    for kx in 0..window {
                        m = m.max(xd[(ci * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}
