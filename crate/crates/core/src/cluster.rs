//! Post-training weight clustering.
//!
//! Each layer's surviving weights are clustered in one dimension. Centroids
//! start at evenly spaced quantiles of the empirical weight distribution and
//! are refined with Lloyd iterations. Pruned weights stay zero and never take
//! part in clustering.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsify::MaskedModel;

/// Iteration cap for Lloyd refinement.
pub const MAX_LLOYD_ITERATIONS: usize = 100;

/// Largest cluster count accepted anywhere (16-bit DAC ceiling).
pub const MAX_CLUSTERS: usize = 1 << 16;

/// Bits of DAC resolution needed to address a codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DacResolution {
    pub bits: u32,
}

/// `max(1, ceil(log2 C))`.
pub fn required_dac_bits(clusters: usize) -> DacResolution {
    let clusters = clusters.max(1);
    let bits = usize::BITS - (clusters - 1).leading_zeros();
    DacResolution { bits: bits.max(1) }
}

/// Centroids of one layer and the centroid index of every surviving weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    centroids: Vec<f64>,
    /// One entry per surviving weight, in flat weight order.
    assignments: Vec<u32>,
}

impl Codebook {
    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    /// Effective cluster count after empty clusters were dropped.
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn dac_resolution(&self) -> DacResolution {
        required_dac_bits(self.centroids.len())
    }

    /// Rebuilds a codebook from centroids and the surviving weight values,
    /// each of which must equal one of the centroids exactly.
    pub fn from_values(centroids: Vec<f64>, values: &[f64]) -> Result<Self> {
        if centroids.is_empty() || centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Clustering(
                "centroids must be non-empty and strictly increasing".into(),
            ));
        }
        let assignments = values
            .iter()
            .map(|v| {
                centroids
                    .binary_search_by(|c| c.total_cmp(v))
                    .map(|i| i as u32)
                    .map_err(|_| Error::Clustering(format!("weight {v} is not a codebook value")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            centroids,
            assignments,
        })
    }
}

/// Codebooks for every clustered layer, plus the requested cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub clusters: usize,
    pub layers: BTreeMap<usize, Codebook>,
}

impl CodebookSet {
    /// Weight DAC resolution implied by the requested cluster count.
    pub fn dac_resolution(&self) -> DacResolution {
        required_dac_bits(self.clusters)
    }
}

/// Density-based initialization: the empirical quantiles at levels
/// `(k + 0.5) / C`, linearly interpolated between order statistics.
///
/// Returns `C` values (possibly repeated when the data has few distinct values).
pub fn init_centroids_density(weights: &[f64], clusters: usize) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Clustering("no weights to initialize from".into()));
    }
    if clusters == 0 {
        return Err(Error::Clustering("cluster count must be at least 1".into()));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((0..clusters)
        .map(|k| quantile_sorted(&sorted, (k as f64 + 0.5) / clusters as f64))
        .collect())
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Outcome of 1-D Lloyd refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydOutcome {
    /// Strictly increasing centroids; empty clusters removed.
    pub centroids: Vec<f64>,
    /// Centroid index per input weight, in input order.
    pub assignments: Vec<u32>,
    pub iterations: usize,
    /// Within-cluster squared error after each centroid update.
    pub sse_history: Vec<f64>,
}

/// Lloyd's algorithm in one dimension, from the given initial centroids.
///
/// Ties between two centroids go to the lower one. Stops once assignments
/// repeat or after `max_iterations` updates.
pub fn lloyd_1d(weights: &[f64], initial: &[f64], max_iterations: usize) -> Result<LloydOutcome> {
    if weights.is_empty() {
        return Err(Error::Clustering("no weights to cluster".into()));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| weights[i]).collect();

    let mut centroids = initial.to_vec();
    centroids.sort_by(f64::total_cmp);
    centroids.dedup();

    // Each cluster is a contiguous range of `sorted`, stored by its end index.
    let mut partition: Option<Vec<usize>> = None;
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iterations {
        let ends = assign_sorted(&sorted, &centroids);
        if partition.as_ref() == Some(&ends) {
            break;
        }
        centroids = range_means(&sorted, &ends);
        sse_history.push(range_sse(&sorted, &ends, &centroids));
        partition = Some(ends);
        iterations += 1;
    }
    let ends = partition.unwrap_or_else(|| assign_sorted(&sorted, &centroids));
    if centroids.len() != ends.len() {
        centroids = range_means(&sorted, &ends);
    }

    let mut assignments = vec![0u32; weights.len()];
    let mut start = 0;
    for (cluster, &end) in ends.iter().enumerate() {
        for &i in &order[start..end] {
            assignments[i] = cluster as u32;
        }
        start = end;
    }
    Ok(LloydOutcome {
        centroids,
        assignments,
        iterations,
        sse_history,
    })
}

/// End index of each non-empty cluster over sorted values.
fn assign_sorted(sorted: &[f64], centroids: &[f64]) -> Vec<usize> {
    let mut ends = Vec::with_capacity(centroids.len());
    let mut prev_end = 0;
    for j in 0..centroids.len() {
        let end = if j + 1 == centroids.len() {
            sorted.len()
        } else {
            let (lo, hi) = (centroids[j], centroids[j + 1]);
            sorted.partition_point(|&v| (v - lo).abs() <= (v - hi).abs())
        }
        .max(prev_end);
        if end > prev_end {
            ends.push(end);
        }
        prev_end = end;
    }
    ends
}

fn range_means(sorted: &[f64], ends: &[usize]) -> Vec<f64> {
    let mut start = 0;
    ends.iter()
        .map(|&end| {
            let slice = &sorted[start..end];
            start = end;
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

fn range_sse(sorted: &[f64], ends: &[usize], centroids: &[f64]) -> f64 {
    let mut start = 0;
    ends.iter()
        .zip(centroids)
        .map(|(&end, &c)| {
            let s: f64 = sorted[start..end].iter().map(|v| (v - c) * (v - c)).sum();
            start = end;
            s
        })
        .sum()
}

/// Clusters each layer's surviving weights into at most `clusters` values.
///
/// Final centroids are rounded to `f32` precision, the precision of the model
/// container, so clustered models survive a save/load round trip unchanged.
/// Layers with no surviving weights are skipped and get no codebook.
pub fn cluster_weights(masked: &MaskedModel, clusters: usize) -> Result<(MaskedModel, CodebookSet)> {
    if clusters == 0 || clusters > MAX_CLUSTERS {
        return Err(Error::Clustering(format!(
            "cluster count {clusters} outside [1, {MAX_CLUSTERS}]"
        )));
    }
    let mut out = masked.clone();
    let mut layers = BTreeMap::new();
    for layer in masked.base.parameterized_layers() {
        let weight = masked.base.weight(layer).expect("validated");
        let kept: Vec<usize> = (0..weight.len())
            .filter(|&i| masked.is_kept(layer, i))
            .collect();
        if kept.is_empty() {
            warn!("layer {layer}: no surviving weights, skipping clustering");
            continue;
        }
        let values: Vec<f64> = kept.iter().map(|&i| weight.data()[i]).collect();
        let codebook = cluster_values(&values, clusters)?;

        let name = masked.base.layers[layer].weight().expect("parameterized").to_string();
        let mut clustered = weight.clone();
        let data = clustered.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        for (&i, &a) in kept.iter().zip(codebook.assignments()) {
            data[i] = codebook.centroids()[a as usize];
        }
        out.base.tensors.insert(name, clustered);
        layers.insert(layer, codebook);
    }
    Ok((out, CodebookSet { clusters, layers }))
}

/// Density init + Lloyd refinement + `f32` rounding for one layer.
///
/// When the values already hold at most `clusters` distinct entries they are
/// their own codebook and are left untouched.
pub fn cluster_values(values: &[f64], clusters: usize) -> Result<Codebook> {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if !distinct.is_empty() && distinct.len() <= clusters {
        return Codebook::from_values(distinct, values);
    }

    let init = init_centroids_density(values, clusters)?;
    let lloyd = lloyd_1d(values, &init, MAX_LLOYD_ITERATIONS)?;

    // Rounding can collapse neighbours; merge them and remap.
    let rounded: Vec<f64> = lloyd.centroids.iter().map(|&c| c as f32 as f64).collect();
    let mut centroids: Vec<f64> = Vec::with_capacity(rounded.len());
    let mut remap = Vec::with_capacity(rounded.len());
    for &c in &rounded {
        if centroids.last() != Some(&c) {
            centroids.push(c);
        }
        remap.push((centroids.len() - 1) as u32);
    }
    let assignments = lloyd
        .assignments
        .iter()
        .map(|&a| remap[a as usize])
        .collect();
    Ok(Codebook {
        centroids,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dac_bits() {
        assert_eq!(required_dac_bits(64).bits, 6);
        assert_eq!(required_dac_bits(16).bits, 4);
        assert_eq!(required_dac_bits(1).bits, 1);
        assert_eq!(required_dac_bits(2).bits, 1);
        assert_eq!(required_dac_bits(3).bits, 2);
        assert_eq!(required_dac_bits(65).bits, 7);
        assert_eq!(required_dac_bits(1 << 16).bits, 16);
    }

    #[test]
    fn density_init_on_one_to_hundred() {
        let w: Vec<f64> = (1..=100).map(f64::from).collect();
        let c = init_centroids_density(&w, 2).unwrap();
        assert!((c[0] - 25.75).abs() < 1e-12);
        assert!((c[1] - 75.25).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_merge_to_one_centroid() {
        let w = vec![0.25; 10];
        let init = init_centroids_density(&w, 4).unwrap();
        assert!(init.iter().all(|&c| c == 0.25));
        let cb = cluster_values(&w, 4).unwrap();
        assert_eq!(cb.centroids(), &[0.25]);
        assert!(cb.assignments().iter().all(|&a| a == 0));
    }

    #[test]
    fn empty_weights_rejected() {
        assert!(init_centroids_density(&[], 3).is_err());
        assert!(init_centroids_density(&[1.0], 0).is_err());
    }

    #[test]
    fn two_tight_groups() {
        let cb = cluster_values(&[1.0, 1.1, 5.0, 5.1], 2).unwrap();
        assert_eq!(cb.assignments(), &[0, 0, 1, 1]);
        assert!((cb.centroids()[0] - 1.05).abs() < 1e-6);
        assert!((cb.centroids()[1] - 5.05).abs() < 1e-6);
    }

    #[test]
    fn enough_clusters_is_a_fixed_point() {
        let w = [0.5f32, -0.25, 0.125, 0.5, -0.25, 2.0].map(f64::from);
        let cb = cluster_values(&w, 8).unwrap();
        for (v, &a) in w.iter().zip(cb.assignments()) {
            assert_eq!(cb.centroids()[a as usize], *v);
        }
    }

    #[test]
    fn skewed_values_with_enough_clusters_stay_exact() {
        let mut w = vec![1.0; 8];
        w.push(0.0);
        w.push(10.0);
        let cb = cluster_values(&w, 3).unwrap();
        assert_eq!(cb.centroids(), &[0.0, 1.0, 10.0]);
    }

    #[test]
    fn codebook_from_values_rejects_foreign_value() {
        assert!(Codebook::from_values(vec![1.0, 2.0], &[1.0, 3.0]).is_err());
        assert!(Codebook::from_values(vec![2.0, 1.0], &[1.0]).is_err());
        let cb = Codebook::from_values(vec![1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_eq!(cb.assignments(), &[1, 0]);
    }
}
