//! Tensors, the sequential CNN representation, its on-disk container, and
//! the exact reference forward pass.

mod container;
mod forward;
mod ir;
mod tensor;

pub use container::{
    load_artifact, load_model, read_manifest, save_artifact, save_model, Artifact,
    ClusteringEntry, CodebookEntry, Manifest, MaskEntry, TensorEntry, BLOB_FILE, MANIFEST_FILE,
};
pub use forward::{batch_norm, conv2d, fully_connected, max_pool, reference_forward, reference_trace, relu};
pub use ir::{count_parameters, LayerKind, LayerSpec, ModelIR};
pub use tensor::{relative_linf, Tensor};

pub(crate) use ir::conv_extent;
