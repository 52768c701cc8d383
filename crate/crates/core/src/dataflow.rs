//! Compression of CONV and FC layers into VDU-ready dot products.
//!
//! FC layers drive the VDUs with the activation vector: zero activations are
//! dropped together with their weight columns. CONV layers are unrolled
//! (im2col) and driven with the kernel vectors: zero kernel entries are
//! dropped together with the matching entry of every input patch. What is
//! left on the other side may still contain zeros; the VDU gates those lanes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{conv_extent, reference_trace, LayerKind, LayerSpec, ModelIR, Tensor};

/// A zero-free driving vector and the rows it is dotted with.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedGemm {
    dense: Vec<f64>,
    dense_index: Vec<usize>,
    /// `output_dim` rows of `dense.len()` values, row-major.
    matrix: Vec<f64>,
    output_dim: usize,
    source_len: usize,
}

impl CompressedGemm {
    /// Nonzero driving values.
    pub fn dense(&self) -> &[f64] {
        &self.dense
    }

    /// Position of each dense value in the uncompressed vector.
    pub fn dense_index(&self) -> &[usize] {
        &self.dense_index
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Compressed vector length.
    pub fn width(&self) -> usize {
        self.dense.len()
    }

    /// Vector length before compression.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// Row `r` of the sparse side, aligned with [`Self::dense`].
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.matrix[r * w..(r + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.output_dim).map(|r| self.row(r))
    }

    /// Plain dot product of the dense vector with every row.
    pub fn evaluate(&self) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(&self.dense).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Zeros left on the sparse side.
    pub fn residual_zeros(&self) -> usize {
        self.matrix.iter().filter(|&&v| v == 0.0).count()
    }
}

/// Drops zero activations and the matching columns of `weight` (out x in).
pub fn compress_fc(weight: &Tensor, activations: &[f64]) -> Result<CompressedGemm> {
    let &[out, inp] = weight.shape() else {
        return Err(Error::Shape(format!(
            "fc weight must be 2-D, got {:?}",
            weight.shape()
        )));
    };
    if activations.len() != inp {
        return Err(Error::Shape(format!(
            "activation length {} does not match weight input dimension {inp}",
            activations.len()
        )));
    }
    let dense_index: Vec<usize> = (0..inp).filter(|&i| activations[i] != 0.0).collect();
    let dense = dense_index.iter().map(|&i| activations[i]).collect();
    let w = weight.data();
    let mut matrix = Vec::with_capacity(out * dense_index.len());
    for r in 0..out {
        let row = &w[r * inp..(r + 1) * inp];
        matrix.extend(dense_index.iter().map(|&i| row[i]));
    }
    Ok(CompressedGemm {
        dense,
        dense_index,
        matrix,
        output_dim: out,
        source_len: inp,
    })
}

/// A convolution rewritten as dot products between flattened kernels and
/// flattened input patches.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledConv {
    /// `out_ch` kernels of `patch_len` values, flattened in `(in_ch, kh, kw)` order.
    kernel_vectors: Vec<f64>,
    /// One patch of `patch_len` values per output pixel, pixels in row-major order.
    patches: Vec<f64>,
    patch_len: usize,
    output_map_shape: [usize; 3],
}

impl UnrolledConv {
    pub fn kernel(&self, channel: usize) -> &[f64] {
        &self.kernel_vectors[channel * self.patch_len..(channel + 1) * self.patch_len]
    }

    pub fn patch(&self, pixel: usize) -> &[f64] {
        &self.patches[pixel * self.patch_len..(pixel + 1) * self.patch_len]
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn pixels(&self) -> usize {
        self.output_map_shape[1] * self.output_map_shape[2]
    }

    pub fn output_map_shape(&self) -> [usize; 3] {
        self.output_map_shape
    }

    /// Convolution output computed from the unrolled form.
    pub fn evaluate(&self) -> Vec<f64> {
        let [oc, _, _] = self.output_map_shape;
        let mut out = Vec::with_capacity(oc * self.pixels());
        for c in 0..oc {
            let k = self.kernel(c);
            for p in 0..self.pixels() {
                out.push(k.iter().zip(self.patch(p)).map(|(a, b)| a * b).sum());
            }
        }
        out
    }
}

/// im2col: unrolls `kernels` (out, in, kh, kw) against `ifmap` (in, H, W).
pub fn unroll_conv(kernels: &Tensor, ifmap: &Tensor, stride: usize, padding: usize) -> Result<UnrolledConv> {
    let (&[oc, ic, kh, kw], &[c, h, w]) = (kernels.shape(), ifmap.shape()) else {
        return Err(Error::Shape(format!(
            "unroll_conv expects 4-D kernels and (C,H,W) map, got {:?} and {:?}",
            kernels.shape(),
            ifmap.shape()
        )));
    };
    if ic != c {
        return Err(Error::Shape(format!(
            "kernels expect {ic} channels, map has {c}"
        )));
    }
    let oh = conv_extent(h, kh, stride, padding).map_err(Error::Shape)?;
    let ow = conv_extent(w, kw, stride, padding).map_err(Error::Shape)?;
    let patch_len = c * kh * kw;
    let x = ifmap.data();
    let mut patches = Vec::with_capacity(oh * ow * patch_len);
    for oy in 0..oh {
        for ox in 0..ow {
            for ci in 0..c {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        let inside = iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize;
                        patches.push(if inside {
                            x[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
    }
    Ok(UnrolledConv {
        kernel_vectors: kernels.data().to_vec(),
        patches,
        patch_len,
        output_map_shape: [oc, oh, ow],
    })
}

/// Per output channel, drops zero kernel entries and the matching patch entries.
pub fn compress_conv(unrolled: &UnrolledConv) -> Vec<CompressedGemm> {
    (0..unrolled.output_map_shape[0])
        .map(|c| compress_conv_channel(unrolled, c))
        .collect()
}

/// [`compress_conv`] for a single output channel.
pub fn compress_conv_channel(unrolled: &UnrolledConv, channel: usize) -> CompressedGemm {
    let kernel = unrolled.kernel(channel);
    let dense_index: Vec<usize> = (0..kernel.len()).filter(|&i| kernel[i] != 0.0).collect();
    let dense = dense_index.iter().map(|&i| kernel[i]).collect();
    let pixels = unrolled.pixels();
    let mut matrix = Vec::with_capacity(pixels * dense_index.len());
    for p in 0..pixels {
        let patch = unrolled.patch(p);
        matrix.extend(dense_index.iter().map(|&i| patch[i]));
    }
    CompressedGemm {
        dense,
        dense_index,
        matrix,
        output_dim: pixels,
        source_len: unrolled.patch_len,
    }
}

/// `ceil(len / chunk)`.
pub fn segment_count(len: usize, chunk: usize) -> usize {
    len.div_ceil(chunk)
}

/// One VDU-sized slice of a dense vector and one aligned row.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPair {
    pub row: usize,
    pub segment: usize,
    /// Always `chunk` long; trailing padding is zero.
    pub dense: Vec<f64>,
    pub sparse: Vec<f64>,
    /// Number of trailing padding lanes.
    pub padding: usize,
}

/// Splits every (dense, row) dot product into `chunk`-wide segments,
/// row-major then segment order. The last segment is zero-padded.
pub fn chunk_work(item: &CompressedGemm, chunk: usize) -> Result<Vec<ChunkPair>> {
    if chunk == 0 {
        return Err(Error::Shape("chunk width must be positive".into()));
    }
    let segments = segment_count(item.width(), chunk);
    let mut out = Vec::with_capacity(item.output_dim() * segments);
    for r in 0..item.output_dim() {
        let row = item.row(r);
        for s in 0..segments {
            let lo = s * chunk;
            let hi = (lo + chunk).min(item.width());
            let mut dense = item.dense[lo..hi].to_vec();
            let mut sparse = row[lo..hi].to_vec();
            let padding = chunk - (hi - lo);
            dense.resize(chunk, 0.0);
            sparse.resize(chunk, 0.0);
            out.push(ChunkPair {
                row: r,
                segment: s,
                dense,
                sparse,
                padding,
            });
        }
    }
    Ok(out)
}

/// Per-layer compression statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub layer: usize,
    pub kind: LayerKind,
    /// Multiply lanes before compression (vector length x rows, summed over work items).
    pub lanes_before: usize,
    pub lanes_after: usize,
    pub zeros_eliminated: usize,
    /// Zeros still present on the sparse side after compression.
    pub residual_zeros: usize,
}

impl CompressionStats {
    pub const CSV_HEADER: &'static str =
        "layer,kind,lanes_before,lanes_after,zeros_eliminated,residual_zeros";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.layer,
            self.kind,
            self.lanes_before,
            self.lanes_after,
            self.zeros_eliminated,
            self.residual_zeros
        )
    }

    fn from_items(layer: usize, kind: LayerKind, items: &[CompressedGemm]) -> Self {
        let lanes_before = items.iter().map(|g| g.source_len() * g.output_dim()).sum();
        let lanes_after = items.iter().map(|g| g.width() * g.output_dim()).sum();
        Self {
            layer,
            kind,
            lanes_before,
            lanes_after,
            zeros_eliminated: lanes_before - lanes_after,
            residual_zeros: items.iter().map(CompressedGemm::residual_zeros).sum(),
        }
    }
}

/// Compresses every CONV and FC layer of `model` for the activations
/// produced by `input`, and reports what was eliminated.
pub fn compression_stats(model: &ModelIR, input: &Tensor) -> Result<Vec<CompressionStats>> {
    let outputs = reference_trace(model, input)?;
    let mut stats = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let x = if i == 0 { input } else { &outputs[i - 1] };
        match layer {
            LayerSpec::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => {
                let unrolled = unroll_conv(model.tensor(weight)?, x, *stride, *padding)?;
                let items = compress_conv(&unrolled);
                stats.push(CompressionStats::from_items(i, LayerKind::Conv2d, &items));
            }
            LayerSpec::FullyConnected { weight, .. } => {
                let item = compress_fc(model.tensor(weight)?, x.data())?;
                stats.push(CompressionStats::from_items(
                    i,
                    LayerKind::FullyConnected,
                    std::slice::from_ref(&item),
                ));
            }
            _ => {}
        }
    }
    Ok(stats)
}
