use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One stage of a sequential CNN.
///
/// Parameterized layers name their tensors; the tensors themselves live in
/// [`ModelIR::tensors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Weight shape `(out_ch, in_ch, kh, kw)`.
    Conv2d {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
        stride: usize,
        padding: usize,
    },
    /// Weight shape `(out_dim, in_dim)`; the input is flattened.
    FullyConnected {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    /// Per-channel `scale * x + shift`.
    BatchNorm { scale: String, shift: String },
    Relu,
    MaxPool { window: usize, stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    FullyConnected,
    BatchNorm,
    Relu,
    MaxPool,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::FullyConnected => "fc",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
        };
        f.write_str(s)
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::FullyConnected { .. } => LayerKind::FullyConnected,
            LayerSpec::BatchNorm { .. } => LayerKind::BatchNorm,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::MaxPool { .. } => LayerKind::MaxPool,
        }
    }

    /// Name of the weight tensor for CONV and FC layers.
    pub fn weight(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv2d { weight, .. } | LayerSpec::FullyConnected { weight, .. } => {
                Some(weight)
            }
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv2d { bias, .. } | LayerSpec::FullyConnected { bias, .. } => {
                bias.as_deref()
            }
            _ => None,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.weight().is_some()
    }

    fn tensor_refs(&self) -> Vec<&str> {
        match self {
            LayerSpec::Conv2d { weight, bias, .. } | LayerSpec::FullyConnected { weight, bias } => {
                let mut v = vec![weight.as_str()];
                v.extend(bias.as_deref());
                v
            }
            LayerSpec::BatchNorm { scale, shift } => vec![scale, shift],
            LayerSpec::Relu | LayerSpec::MaxPool { .. } => Vec::new(),
        }
    }
}

/// A sequential CNN: ordered layers plus the named tensors they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIR {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelIR {
    /// Builds a model and checks every structural invariant.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let model = Self {
            name: name.into(),
            input_shape,
            layers,
            tensors,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidModel(format!("missing tensor `{name}`")))
    }

    pub fn weight(&self, layer: usize) -> Option<&Tensor> {
        self.layers
            .get(layer)
            .and_then(LayerSpec::weight)
            .and_then(|w| self.tensors.get(w))
    }

    /// Indices of CONV and FC layers.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks chain compatibility and returns the output shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("layer chain must be non-empty".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "input shape {:?} must be non-empty and positive",
                self.input_shape
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for name in layer.tensor_refs() {
                if !self.tensors.contains_key(name) {
                    return Err(Error::InvalidModel(format!(
                        "layer {i} references missing tensor `{name}`"
                    )));
                }
            }
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = self
                .output_shape(layer, &current)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    fn output_shape(&self, layer: &LayerSpec, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match layer {
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let w = &self.tensors[weight];
                let &[oc, ic, kh, kw] = w.shape() else {
                    return Err(format!("conv weight must be 4-D, got {:?}", w.shape()));
                };
                let &[c, h, wd] = input else {
                    return Err(format!("conv input must be (C, H, W), got {input:?}"));
                };
                if ic != c {
                    return Err(format!("weight expects {ic} input channels, input has {c}"));
                }
                check_bias(self, bias.as_deref(), oc)?;
                let oh = conv_extent(h, kh, *stride, *padding)?;
                let ow = conv_extent(wd, kw, *stride, *padding)?;
                Ok(vec![oc, oh, ow])
            }
            LayerSpec::FullyConnected { weight, bias } => {
                let w = &self.tensors[weight];
                let &[out, inp] = w.shape() else {
                    return Err(format!("fc weight must be 2-D, got {:?}", w.shape()));
                };
                let flat: usize = input.iter().product();
                if flat != inp {
                    return Err(format!("weight expects {inp} inputs, got {flat}"));
                }
                check_bias(self, bias.as_deref(), out)?;
                Ok(vec![out])
            }
            LayerSpec::BatchNorm { scale, shift } => {
                let ch = input[0];
                for name in [scale, shift] {
                    let t = &self.tensors[name];
                    if t.len() != ch {
                        return Err(format!(
                            "batchnorm tensor `{name}` has {} entries for {ch} channels",
                            t.len()
                        ));
                    }
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { window, stride } => {
                let &[c, h, w] = input else {
                    return Err(format!("maxpool input must be (C, H, W), got {input:?}"));
                };
                if *window == 0 || *stride == 0 {
                    return Err("maxpool window and stride must be positive".into());
                }
                if h < *window || w < *window {
                    return Err(format!("window {window} exceeds map {h}x{w}"));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
        }
    }
}

fn check_bias(model: &ModelIR, bias: Option<&str>, out: usize) -> std::result::Result<(), String> {
    if let Some(b) = bias {
        let t = &model.tensors[b];
        if t.len() != out {
            return Err(format!("bias `{b}` has {} entries for {out} outputs", t.len()));
        }
    }
    Ok(())
}

pub(crate) fn conv_extent(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> std::result::Result<usize, String> {
    if stride == 0 {
        return Err("stride must be positive".into());
    }
    if kernel == 0 || size + 2 * padding < kernel {
        return Err(format!(
            "kernel {kernel} does not fit extent {size} with padding {padding}"
        ));
    }
    Ok((size + 2 * padding - kernel) / stride + 1)
}

/// Total element count of all CONV and FC weight tensors.
pub fn count_parameters(model: &ModelIR) -> usize {
    model
        .layers
        .iter()
        .filter_map(LayerSpec::weight)
        .map(|w| model.tensors.get(w).map_or(0, Tensor::len))
        .sum()
}
