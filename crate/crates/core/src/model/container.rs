//! On-disk model container.
//!
//! A container is a directory holding `manifest.json` and `tensors.bin`. The
//! blob is every tensor as little-endian `f32`, row-major, concatenated in
//! manifest order with no gaps. Pruning masks are stored as ordinary 0/1
//! tensors; codebooks are stored as per-layer centroid arrays in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ir::{count_parameters, LayerSpec, ModelIR};
use super::tensor::Tensor;
use crate::cluster::{Codebook, CodebookSet};
use crate::error::{Error, Result};
use crate::sparsify::{count_nonzero, Mask, MaskedModel};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";
pub const FORMAT_NAME: &str = "psim-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    pub parameter_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surviving_parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<MaskEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `tensors.bin`.
    pub offset: u64,
    /// Byte length in `tensors.bin`.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub layer: usize,
    pub tensor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringEntry {
    pub clusters: usize,
    pub codebooks: Vec<CodebookEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub layer: usize,
    pub centroids: Vec<f64>,
}

/// Everything a container can hold: a (possibly pruned) model and, once
/// clustered, its codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub model: MaskedModel,
    pub codebooks: Option<CodebookSet>,
}

impl Artifact {
    pub fn plain(model: ModelIR) -> Self {
        Self {
            model: MaskedModel::unpruned(model),
            codebooks: None,
        }
    }
}

pub fn save_model(model: &ModelIR, dir: impl AsRef<Path>) -> Result<()> {
    save_artifact(&Artifact::plain(model.clone()), dir)
}

/// Loads a container's base model. Masks and codebooks, if present, are
/// validated but not applied; use [`load_artifact`] to get them.
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelIR> {
    Ok(load_artifact(dir)?.model.base)
}

pub fn save_artifact(artifact: &Artifact, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let model = &artifact.model.base;
    model.validate()?;

    let mut blobs: Vec<(String, &Tensor)> =
        model.tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    let mask_tensors: Vec<(usize, String, Tensor)> = artifact
        .model
        .masks
        .iter()
        .map(|(&layer, mask)| {
            let weight = model.layers[layer].weight().expect("mask on weighted layer");
            (layer, format!("{weight}.mask"), mask.to_tensor())
        })
        .collect();
    for (_, name, t) in &mask_tensors {
        if model.tensors.contains_key(name) {
            return Err(Error::InvalidModel(format!(
                "mask tensor name `{name}` collides with a model tensor"
            )));
        }
        blobs.push((name.clone(), t));
    }

    let mut entries = Vec::with_capacity(blobs.len());
    let mut offset = 0u64;
    for (name, t) in &blobs {
        let length = 4 * t.len() as u64;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }

    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        layers: model.layers.clone(),
        tensors: entries,
        parameter_count: count_parameters(model),
        surviving_parameter_count: (!artifact.model.masks.is_empty())
            .then(|| count_nonzero(&artifact.model)),
        masks: mask_tensors
            .iter()
            .map(|(layer, name, _)| MaskEntry {
                layer: *layer,
                tensor: name.clone(),
            })
            .collect(),
        clustering: artifact.codebooks.as_ref().map(|set| ClusteringEntry {
            clusters: set.clusters,
            codebooks: set
                .layers
                .iter()
                .map(|(&layer, cb)| CodebookEntry {
                    layer,
                    centroids: cb.centroids().to_vec(),
                })
                .collect(),
        }),
    };

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_path = dir.join(BLOB_FILE);
    let file = fs::File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut w = BufWriter::new(file);
    for (name, t) in &blobs {
        for &v in t.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("{name} (out of f32 range)")));
            }
            w.write_all(&f.to_le_bytes())
                .map_err(|e| Error::io(&blob_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&blob_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Manifest(format!(
            "unexpected format `{}`",
            manifest.format
        )));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

pub fn load_artifact(dir: impl AsRef<Path>) -> Result<Artifact> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    let mut tensors = BTreeMap::new();
    let mut expected_offset = 0u64;
    for entry in &manifest.tensors {
        let elements: usize = entry.shape.iter().product();
        if entry.length != 4 * elements as u64 {
            return Err(Error::Manifest(format!(
                "tensor `{}` declares {} bytes for {elements} f32 elements",
                entry.name, entry.length
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Manifest(format!(
                "tensor `{}` at offset {} but blob layout requires {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let end = entry.offset + entry.length;
        if end > blob.len() as u64 {
            return Err(Error::BlobTruncated {
                name: entry.name.clone(),
                offset: entry.offset,
                needed: entry.length,
                available: blob.len() as u64,
            });
        }
        let bytes = &blob[entry.offset as usize..end as usize];
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(entry.name.clone()));
        }
        let t = Tensor::new(entry.shape.clone(), data)?;
        if tensors.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Manifest(format!("duplicate tensor `{}`", entry.name)));
        }
        expected_offset = end;
    }
    if expected_offset != blob.len() as u64 {
        return Err(Error::Manifest(format!(
            "blob has {} trailing bytes",
            blob.len() as u64 - expected_offset
        )));
    }

    let mut masks = BTreeMap::new();
    for entry in &manifest.masks {
        let t = tensors.remove(&entry.tensor).ok_or_else(|| {
            Error::Manifest(format!("mask tensor `{}` not in blob", entry.tensor))
        })?;
        masks.insert(entry.layer, Mask::from_tensor(&t)?);
    }

    let model = ModelIR::new(manifest.name, manifest.input_shape, manifest.layers, tensors)?;
    if count_parameters(&model) != manifest.parameter_count {
        return Err(Error::Manifest(format!(
            "manifest reports {} parameters, tensors hold {}",
            manifest.parameter_count,
            count_parameters(&model)
        )));
    }
    let masked = MaskedModel::new(model, masks)?;

    let codebooks = match manifest.clustering {
        None => None,
        Some(entry) => {
            let mut layers = BTreeMap::new();
            for cb in entry.codebooks {
                let weight = masked.base.weight(cb.layer).ok_or_else(|| {
                    Error::Manifest(format!("codebook for non-parameterized layer {}", cb.layer))
                })?;
                let values: Vec<f64> = (0..weight.len())
                    .filter(|&i| masked.is_kept(cb.layer, i))
                    .map(|i| weight.data()[i])
                    .collect();
                layers.insert(cb.layer, Codebook::from_values(cb.centroids, &values)?);
            }
            Some(CodebookSet {
                clusters: entry.clusters,
                layers,
            })
        }
    };

    Ok(Artifact {
        model: masked,
        codebooks,
    })
}
