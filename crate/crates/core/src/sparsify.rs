//! Layer-wise magnitude pruning with binary masks.
//!
//! For each planned layer with `P` weights and target sparsity `s`, exactly
//! `floor(s * P)` weights are masked: the smallest by absolute value, lower
//! flat index first among equal magnitudes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{reference_trace, LayerSpec, ModelIR, Tensor};

/// Target sparsity per parameterized layer. Layers absent from the plan are untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparsityPlan {
    entries: BTreeMap<usize, f64>,
}

impl SparsityPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, layer: usize, sparsity: f64) -> Result<Self> {
        self.set(layer, sparsity)?;
        Ok(self)
    }

    pub fn set(&mut self, layer: usize, sparsity: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::Plan(format!(
                "layer {layer}: sparsity {sparsity} outside [0, 1]"
            )));
        }
        self.entries.insert(layer, sparsity);
        Ok(())
    }

    /// The same sparsity on every CONV and FC layer of `model`.
    pub fn uniform(model: &ModelIR, sparsity: f64) -> Result<Self> {
        Self::for_layers(&model.parameterized_layers(), sparsity)
    }

    pub fn for_layers(layers: &[usize], sparsity: f64) -> Result<Self> {
        let mut plan = Self::new();
        for &l in layers {
            plan.set(l, sparsity)?;
        }
        Ok(plan)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&l, &s)| (l, s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Binary keep-mask congruent to a weight tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            keep: vec![true; shape.iter().product()],
        }
    }

    pub fn from_bits(shape: Vec<usize>, keep: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != keep.len() {
            return Err(Error::Shape(format!(
                "mask of shape {shape:?} given {} bits",
                keep.len()
            )));
        }
        Ok(Self { shape, keep })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), data).expect("mask shape is valid")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let keep = t
            .data()
            .iter()
            .map(|&v| match v {
                v if v == 1.0 => Ok(true),
                v if v == 0.0 => Ok(false),
                v => Err(Error::Manifest(format!("mask value {v} is not 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        Self::from_bits(t.shape().to_vec(), keep)
    }
}

/// A model plus per-layer pruning masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedModel {
    pub base: ModelIR,
    pub masks: BTreeMap<usize, Mask>,
}

impl MaskedModel {
    /// Wraps an unpruned model.
    pub fn unpruned(base: ModelIR) -> Self {
        Self {
            base,
            masks: BTreeMap::new(),
        }
    }

    pub fn new(base: ModelIR, masks: BTreeMap<usize, Mask>) -> Result<Self> {
        for (&layer, mask) in &masks {
            let w = base.weight(layer).ok_or_else(|| {
                Error::Plan(format!("mask attached to non-parameterized layer {layer}"))
            })?;
            if w.shape() != mask.shape() {
                return Err(Error::Shape(format!(
                    "layer {layer}: mask shape {:?} differs from weight shape {:?}",
                    mask.shape(),
                    w.shape()
                )));
            }
        }
        Ok(Self { base, masks })
    }

    /// Effective weights `w * mask` for one layer.
    pub fn effective_weight(&self, layer: usize) -> Option<Tensor> {
        let w = self.base.weight(layer)?;
        let mut out = w.clone();
        if let Some(mask) = self.masks.get(&layer) {
            for (v, &k) in out.data_mut().iter_mut().zip(mask.bits()) {
                if !k {
                    *v = 0.0;
                }
            }
        }
        Some(out)
    }

    /// The base model with masked weights explicitly zeroed.
    pub fn effective_model(&self) -> ModelIR {
        let mut model = self.base.clone();
        for &layer in self.masks.keys() {
            let name = model.layers[layer].weight().expect("validated").to_string();
            let w = self.effective_weight(layer).expect("validated");
            model.tensors.insert(name, w);
        }
        model
    }

    /// Whether weight `index` of `layer` survived pruning.
    pub fn is_kept(&self, layer: usize, index: usize) -> bool {
        self.masks.get(&layer).map_or(true, |m| m.bits()[index])
    }
}

/// Applies `plan` to `model` and returns the masks.
pub fn prune(model: &ModelIR, plan: &SparsityPlan) -> Result<MaskedModel> {
    let mut masks = BTreeMap::new();
    for (layer, sparsity) in plan.entries() {
        let spec = model
            .layers
            .get(layer)
            .ok_or_else(|| Error::Plan(format!("layer {layer} does not exist")))?;
        if !spec.is_parameterized() {
            return Err(Error::Plan(format!(
                "layer {layer} ({}) has no weights to prune",
                spec.kind()
            )));
        }
        let w = model.weight(layer).expect("validated model");
        masks.insert(layer, magnitude_mask(w, sparsity));
    }
    MaskedModel::new(model.clone(), masks)
}

/// Number of weights masked at sparsity `s` in a layer of `count` weights.
pub fn pruned_count(count: usize, sparsity: f64) -> usize {
    ((sparsity * count as f64).floor() as usize).min(count)
}

fn magnitude_mask(w: &Tensor, sparsity: f64) -> Mask {
    let data = w.data();
    let k = pruned_count(data.len(), sparsity);
    let mut keep = vec![true; data.len()];
    if k > 0 {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let by_magnitude =
            |&a: &usize, &b: &usize| data[a].abs().total_cmp(&data[b].abs()).then(a.cmp(&b));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_magnitude);
        }
        for &i in &order[..k] {
            keep[i] = false;
        }
    }
    Mask {
        shape: w.shape().to_vec(),
        keep,
    }
}

/// Surviving weights across all CONV and FC layers; unpruned layers count in full.
pub fn count_nonzero(masked: &MaskedModel) -> usize {
    masked
        .base
        .parameterized_layers()
        .into_iter()
        .map(|l| match masked.masks.get(&l) {
            Some(m) => m.kept(),
            None => masked.base.weight(l).map_or(0, Tensor::len),
        })
        .sum()
}

/// Weight and activation sparsity of one layer as seen by a probe input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    /// Fraction of zero effective weights; `None` for layers without weights.
    pub weight_sparsity: Option<f64>,
    /// Fraction of zero values in the layer output.
    pub activation_sparsity: f64,
}

/// Runs the masked model on `probe` and records per-layer zero fractions.
pub fn layer_sparsity_profile(masked: &MaskedModel, probe: &Tensor) -> Result<Vec<LayerSparsity>> {
    let model = masked.effective_model();
    let outputs = reference_trace(&model, probe)?;
    Ok(model
        .layers
        .iter()
        .zip(&outputs)
        .enumerate()
        .map(|(i, (layer, out))| LayerSparsity {
            layer: i,
            weight_sparsity: match layer {
                LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. } => model
                    .weight(i)
                    .map(|w| w.count_zeros() as f64 / w.len() as f64),
                _ => None,
            },
            activation_sparsity: out.count_zeros() as f64 / out.len() as f64,
        })
        .collect())
}
