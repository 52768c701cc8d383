//! Grid search over sparsity, cluster count, pruned layers and array geometry.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_weights, MAX_CLUSTERS};
use crate::error::{Error, Result};
use crate::model::{reference_forward, Artifact, ModelIR, Tensor};
use crate::schedule::{quant_for, simulate, Metrics, SimReport, SimSetup, VduConfig};
use crate::sparsify::{count_nonzero, prune, SparsityPlan};

/// Ranking criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    FpsPerWatt,
    Epb,
    Fps,
    AccuracyProxy,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fps_per_watt" => Ok(Self::FpsPerWatt),
            "epb" => Ok(Self::Epb),
            "fps" => Ok(Self::Fps),
            "accuracy_proxy" => Ok(Self::AccuracyProxy),
            other => Err(Error::Config(format!(
                "unknown objective `{other}`, expected fps_per_watt, epb, fps or accuracy_proxy"
            ))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FpsPerWatt => "fps_per_watt",
            Self::Epb => "epb",
            Self::Fps => "fps",
            Self::AccuracyProxy => "accuracy_proxy",
        })
    }
}

/// Which layers a grid point's sparsity applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSubset {
    All,
    /// The `k` parameterized layers with the most weights.
    Largest(usize),
    Layers(Vec<usize>),
}

impl LayerSubset {
    pub fn plan(&self, model: &ModelIR, sparsity: f64) -> Result<SparsityPlan> {
        match self {
            Self::All => SparsityPlan::uniform(model, sparsity),
            Self::Largest(k) => {
                let mut layers = model.parameterized_layers();
                // Stable sort keeps earlier layers first among equal sizes.
                layers.sort_by_key(|&l| std::cmp::Reverse(model.weight(l).map_or(0, Tensor::len)));
                layers.truncate(*k);
                layers.sort_unstable();
                SparsityPlan::for_layers(&layers, sparsity)
            }
            Self::Layers(layers) => SparsityPlan::for_layers(layers, sparsity),
        }
    }
}

impl FromStr for LayerSubset {
    type Err = Error;

    /// `all`, `largest:K`, or a comma-separated list of layer indices.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer subset `{s}`"));
        if s == "all" {
            return Ok(Self::All);
        }
        if let Some(k) = s.strip_prefix("largest:") {
            return k.trim().parse().map(Self::Largest).map_err(|_| bad());
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()
            .map(Self::Layers)
    }
}

impl fmt::Display for LayerSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::Largest(k) => write!(f, "largest:{k}"),
            Self::Layers(l) => {
                let parts: Vec<String> = l.iter().map(usize::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Axes of the search. `None` in `clusters` means no clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationGrid {
    pub sparsity: Vec<f64>,
    pub clusters: Vec<Option<usize>>,
    pub layers: Vec<LayerSubset>,
    pub arch: Vec<VduConfig>,
    pub objective: Objective,
}

impl ExplorationGrid {
    pub fn validate(&self) -> Result<()> {
        if self.sparsity.is_empty() || self.clusters.is_empty() || self.layers.is_empty() || self.arch.is_empty() {
            return Err(Error::Config("every exploration axis needs at least one value".into()));
        }
        for c in self.clusters.iter().flatten() {
            if *c == 0 || *c > MAX_CLUSTERS {
                return Err(Error::Config(format!(
                    "cluster count {c} outside 1..={MAX_CLUSTERS}"
                )));
            }
        }
        for a in &self.arch {
            a.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sparsity.len() * self.clusters.len() * self.layers.len() * self.arch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points in index order: sparsity outermost, arch innermost.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &sparsity in &self.sparsity {
            for &clusters in &self.clusters {
                for layers in &self.layers {
                    for &arch in &self.arch {
                        out.push(GridPoint {
                            index: out.len(),
                            sparsity,
                            clusters,
                            layers: layers.clone(),
                            arch,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub sparsity: f64,
    pub clusters: Option<usize>,
    pub layers: LayerSubset,
    pub arch: VduConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    /// Fraction of eval inputs whose top-1 class matches the expected label.
    pub accuracy_proxy: f64,
    pub fps: f64,
    pub fps_per_watt: f64,
    pub epb: f64,
    pub avg_power_w: f64,
    pub energy_j: f64,
    pub latency_s: f64,
    pub gated: u64,
    pub surviving_parameters: usize,
    pub weight_bits: u32,
}

impl PointMetrics {
    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::FpsPerWatt => self.fps_per_watt,
            Objective::Epb => self.epb,
            Objective::Fps => self.fps,
            Objective::AccuracyProxy => self.accuracy_proxy,
        }
    }

    /// At least as good everywhere and better somewhere, over
    /// accuracy, fps, fps/W (higher is better) and epb (lower is better).
    pub fn dominates(&self, other: &Self) -> bool {
        let ge = self.accuracy_proxy >= other.accuracy_proxy
            && self.fps >= other.fps
            && self.fps_per_watt >= other.fps_per_watt
            && self.epb <= other.epb;
        let gt = self.accuracy_proxy > other.accuracy_proxy
            || self.fps > other.fps
            || self.fps_per_watt > other.fps_per_watt
            || self.epb < other.epb;
        ge && gt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub metrics: PointMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub point: GridPoint,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub objective: Objective,
    /// Best first; ties keep grid order.
    pub ranked: Vec<PointResult>,
    /// Grid indices of non-dominated results, ascending.
    pub pareto: Vec<usize>,
    pub failures: Vec<PointFailure>,
}

impl Exploration {
    pub const CSV_HEADER: &'static str = "rank,index,sparsity,clusters,layers,n,m,N,K,accuracy_proxy,fps,fps_per_watt,epb,avg_power_w,energy_j,latency_s,gated,surviving_parameters,weight_bits,pareto";

    /// One row per grid point, ranked results first, failures last.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# objective: ");
        s.push_str(&self.objective.to_string());
        s.push('\n');
        for (k, v) in crate::report::DEFINITIONS {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(Self::CSV_HEADER);
        s.push_str(",error\n");
        let point_cols = |p: &GridPoint| {
            format!(
                "{},{},{},\"{}\",{},{},{},{}",
                p.index,
                p.sparsity,
                p.clusters.map_or("none".to_string(), |c| c.to_string()),
                p.layers,
                p.arch.n,
                p.arch.m,
                p.arch.conv_units,
                p.arch.fc_units
            )
        };
        for (rank, r) in self.ranked.iter().enumerate() {
            let m = &r.metrics;
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{},\n",
                rank + 1,
                point_cols(&r.point),
                m.accuracy_proxy,
                m.fps,
                m.fps_per_watt,
                m.epb,
                m.avg_power_w,
                m.energy_j,
                m.latency_s,
                m.gated,
                m.surviving_parameters,
                m.weight_bits,
                self.pareto.contains(&r.point.index),
            ));
        }
        for f in &self.failures {
            s.push_str(&format!(
                ",{},,,,,,,,,,,,\"{}\"\n",
                point_cols(&f.point),
                f.error.replace('"', "'")
            ));
        }
        s
    }
}

/// Evaluation inputs with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub inputs: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
}

impl EvalSet {
    /// `count` seeded random inputs without labels.
    pub fn synthetic(model: &ModelIR, count: usize, seed: u64) -> Self {
        Self {
            inputs: (0..count as u64)
                .map(|i| crate::fixtures::random_input(&model.input_shape, seed.wrapping_add(i)))
                .collect(),
            labels: None,
        }
    }

    /// Labels if given, otherwise the unoptimized model's top-1 predictions.
    fn expected(&self, model: &ModelIR) -> Result<Vec<usize>> {
        if let Some(l) = &self.labels {
            if l.len() != self.inputs.len() {
                return Err(Error::Config("label count differs from input count".into()));
            }
            return Ok(l.clone());
        }
        self.inputs
            .iter()
            .map(|x| reference_forward(model, x).map(|y| y.argmax()))
            .collect()
    }
}

/// Prunes and optionally clusters `model`.
pub fn compress(model: &ModelIR, plan: &SparsityPlan, clusters: Option<usize>) -> Result<Artifact> {
    let masked = prune(model, plan)?;
    Ok(match clusters {
        None => Artifact {
            model: masked,
            codebooks: None,
        },
        Some(c) => {
            let (model, books) = cluster_weights(&masked, c)?;
            Artifact {
                model,
                codebooks: Some(books),
            }
        }
    })
}

/// Simulates `artifact` on every eval input and sums the reports.
pub fn evaluate(artifact: &Artifact, eval: &EvalSet, expected: &[usize], setup: &SimSetup) -> Result<(SimReport, f64)> {
    if eval.inputs.is_empty() {
        return Err(Error::Config("empty eval set".into()));
    }
    let mut reports = Vec::with_capacity(eval.inputs.len());
    let mut hits = 0;
    for (x, &want) in eval.inputs.iter().zip(expected) {
        let sim = simulate(artifact, x, setup)?;
        hits += usize::from(sim.output.argmax() == want);
        reports.push(sim.report);
    }
    Ok((SimReport::aggregate(&reports)?, hits as f64 / eval.inputs.len() as f64))
}

fn point_metrics(report: &SimReport, accuracy: f64, artifact: &Artifact) -> PointMetrics {
    let Metrics {
        fps,
        avg_power_w,
        fps_per_watt,
        epb,
    } = report.metrics;
    PointMetrics {
        accuracy_proxy: accuracy,
        fps,
        fps_per_watt,
        epb,
        avg_power_w,
        energy_j: report.total_energy_j,
        latency_s: report.total_latency_s,
        gated: report.total_gated,
        surviving_parameters: count_nonzero(&artifact.model),
        weight_bits: report.quant.weight_bits,
    }
}

fn better(objective: Objective, a: &PointResult, b: &PointResult) -> std::cmp::Ordering {
    let (x, y) = (a.metrics.objective(objective), b.metrics.objective(objective));
    let primary = match objective {
        Objective::Epb => x.total_cmp(&y),
        _ => y.total_cmp(&x),
    };
    primary.then(a.point.index.cmp(&b.point.index))
}

/// Grid indices of the results no other result dominates.
pub fn pareto_front(results: &[PointResult]) -> Vec<usize> {
    let mut front: Vec<usize> = results
        .iter()
        .filter(|r| !results.iter().any(|o| o.metrics.dominates(&r.metrics)))
        .map(|r| r.point.index)
        .collect();
    front.sort_unstable();
    front
}

/// Evaluates every grid point. Point failures are recorded, not raised.
///
/// `base.arch` is replaced per point. `jobs > 1` evaluates compression
/// groups in parallel; output order does not depend on it.
pub fn explore(model: &ModelIR, eval: &EvalSet, grid: &ExplorationGrid, base: &SimSetup, jobs: usize) -> Result<Exploration> {
    grid.validate()?;
    let expected = eval.expected(model)?;
    let points = grid.points();
    let groups: Vec<&[GridPoint]> = points.chunks(grid.arch.len()).collect();

    let run_group = |group: &&[GridPoint]| -> Vec<std::result::Result<PointResult, PointFailure>> {
        let head = &group[0];
        let artifact = head
            .layers
            .plan(model, head.sparsity)
            .and_then(|plan| compress(model, &plan, head.clusters));
        group
            .iter()
            .map(|p| {
                let outcome = artifact.as_ref().map_err(|e| e.to_string()).and_then(|a| {
                    let setup = SimSetup {
                        arch: p.arch,
                        quant: quant_for(a, base.quant.exact_mode),
                        ..*base
                    };
                    evaluate(a, eval, &expected, &setup)
                        .map(|(report, acc)| point_metrics(&report, acc, a))
                        .map_err(|e| e.to_string())
                });
                match outcome {
                    Ok(metrics) => Ok(PointResult {
                        point: p.clone(),
                        metrics,
                    }),
                    Err(error) => Err(PointFailure {
                        point: p.clone(),
                        error,
                    }),
                }
            })
            .collect()
    };

    let evaluated: Vec<_> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| groups.par_iter().map(run_group).collect())
    } else {
        groups.iter().map(run_group).collect()
    };

    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for outcome in evaluated.into_iter().flatten() {
        match outcome {
            Ok(r) => ranked.push(r),
            Err(f) => {
                log::warn!("grid point {} failed: {}", f.point.index, f.error);
                failures.push(f)
            }
        }
    }
    let pareto = pareto_front(&ranked);
    ranked.sort_by(|a, b| better(grid.objective, a, b));
    Ok(Exploration {
        objective: grid.objective,
        ranked,
        pareto,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchResult {
    /// Position in the input list.
    pub index: usize,
    pub arch: VduConfig,
    pub report: SimReport,
}

/// Simulates an already compressed artifact under each geometry and ranks
/// by FPS/W, then EPB.
pub fn sweep_arch(artifact: &Artifact, inputs: &[Tensor], configs: &[VduConfig], base: &SimSetup) -> Result<Vec<ArchResult>> {
    let mut out = configs
        .iter()
        .enumerate()
        .map(|(index, &arch)| {
            let setup = SimSetup { arch, ..*base };
            let reports = inputs
                .iter()
                .map(|x| simulate(artifact, x, &setup).map(|s| s.report))
                .collect::<Result<Vec<_>>>()?;
            Ok(ArchResult {
                index,
                arch,
                report: SimReport::aggregate(&reports)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        let (ma, mb) = (&a.report.metrics, &b.report.metrics);
        mb.fps_per_watt
            .total_cmp(&ma.fps_per_watt)
            .then(ma.epb.total_cmp(&mb.epb))
            .then(a.index.cmp(&b.index))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn subset_parsing() {
        assert_eq!("all".parse::<LayerSubset>().unwrap(), LayerSubset::All);
        assert_eq!("largest:2".parse::<LayerSubset>().unwrap(), LayerSubset::Largest(2));
        assert_eq!("0, 3".parse::<LayerSubset>().unwrap(), LayerSubset::Layers(vec![0, 3]));
        assert!("largest:x".parse::<LayerSubset>().is_err());
    }

    #[test]
    fn largest_picks_biggest_layers() {
        let m = fixtures::mnist_like(0);
        let plan = LayerSubset::Largest(1).plan(&m, 0.5).unwrap();
        let layers: Vec<usize> = plan.entries().map(|(l, _)| l).collect();
        // The first FC layer holds most of the weights.
        assert_eq!(layers, vec![5]);
    }

    #[test]
    fn identity_point_agrees_fully() {
        let m = fixtures::toy_cnn(5);
        let eval = EvalSet::synthetic(&m, 3, 9);
        let grid = ExplorationGrid {
            sparsity: vec![0.0],
            clusters: vec![None],
            layers: vec![LayerSubset::All],
            arch: vec![VduConfig::default()],
            objective: Objective::FpsPerWatt,
        };
        let setup = SimSetup {
            quant: crate::photonic::QuantSpec::exact(),
            ..SimSetup::default()
        };
        let ex = explore(&m, &eval, &grid, &setup, 1).unwrap();
        assert_eq!(ex.ranked.len(), 1);
        assert_eq!(ex.ranked[0].metrics.accuracy_proxy, 1.0);
        assert_eq!(ex.pareto, vec![0]);
    }

    #[test]
    fn bad_point_is_recorded() {
        let m = fixtures::toy_cnn(5);
        let eval = EvalSet::synthetic(&m, 1, 9);
        let grid = ExplorationGrid {
            sparsity: vec![0.5],
            clusters: vec![None],
            layers: vec![LayerSubset::Layers(vec![1]), LayerSubset::All],
            arch: vec![VduConfig::default()],
            objective: Objective::Epb,
        };
        let ex = explore(&m, &eval, &grid, &SimSetup::default(), 1).unwrap();
        assert_eq!(ex.failures.len(), 1);
        assert_eq!(ex.ranked.len(), 1);
        assert_eq!(ex.failures[0].point.index, 0);
    }

    #[test]
    fn empty_axis_rejected() {
        let grid = ExplorationGrid {
            sparsity: vec![],
            clusters: vec![None],
            layers: vec![LayerSubset::All],
            arch: vec![VduConfig::default()],
            objective: Objective::Fps,
        };
        assert!(grid.validate().is_err());
    }
}
