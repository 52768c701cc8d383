//! Mapping of compressed work onto the VDU array and whole-model simulation.
//!
//! CONV layers run on `N` units of width `n`, FC layers on `K` units of
//! width `m`. Passes are dealt round-robin and units advance in lockstep, so
//! a layer takes `ceil(passes / units)` pass latencies. Bias, batch norm
//! shift, ReLU, pooling and partial-sum accumulation are electronic.

use serde::{Deserialize, Serialize};

use crate::dataflow::{compress_conv_channel, compress_fc, segment_count, unroll_conv, CompressedGemm};
use crate::error::{Error, Result};
use crate::model::{batch_norm, max_pool, relu, Artifact, LayerSpec, ModelIR, Tensor};
use crate::photonic::{quantize, DeviceParams, QuantSpec, UnitKind, Vdu};

/// Bits produced by one ADC readout.
pub const ADC_OUTPUT_BITS: u64 = 16;

/// VDU array geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VduConfig {
    /// CONV chunk width.
    pub n: usize,
    /// FC chunk width.
    pub m: usize,
    /// CONV unit count.
    #[serde(rename = "N")]
    pub conv_units: usize,
    /// FC unit count.
    #[serde(rename = "K")]
    pub fc_units: usize,
}

impl Default for VduConfig {
    fn default() -> Self {
        Self::new(5, 50, 50, 10)
    }
}

impl std::fmt::Display for VduConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.m, self.conv_units, self.fc_units)
    }
}

impl VduConfig {
    pub const fn new(n: usize, m: usize, conv_units: usize, fc_units: usize) -> Self {
        Self {
            n,
            m,
            conv_units,
            fc_units,
        }
    }

    /// Rejects zero sizes and returns warnings for unusual proportions.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n == 0 || self.m == 0 || self.conv_units == 0 || self.fc_units == 0 {
            return Err(Error::Config(format!(
                "arch sizes must be positive, got {self}"
            )));
        }
        let mut warnings = Vec::new();
        if self.m <= self.n {
            warnings.push(format!(
                "FC width m={} is not larger than CONV width n={}",
                self.m, self.n
            ));
        }
        if self.fc_units >= self.conv_units {
            warnings.push(format!(
                "FC unit count K={} is not smaller than CONV unit count N={}",
                self.fc_units, self.conv_units
            ));
        }
        Ok(warnings)
    }

    pub fn chunk(&self, kind: UnitKind) -> usize {
        match kind {
            UnitKind::Conv => self.n,
            UnitKind::Fc => self.m,
        }
    }

    pub fn units(&self, kind: UnitKind) -> usize {
        match kind {
            UnitKind::Conv => self.conv_units,
            UnitKind::Fc => self.fc_units,
        }
    }
}

/// Bits moved through the photonic core by one pass.
pub fn pass_bits(active_lanes: usize, quant: &QuantSpec) -> u64 {
    active_lanes as u64 * u64::from(quant.weight_bits + quant.activation_bits) + ADC_OUTPUT_BITS
}

/// Statistics for one CONV or FC layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub kind: UnitKind,
    pub passes: u64,
    pub waves: u64,
    pub gated: u64,
    pub active_lanes: u64,
    pub bits: u64,
    /// Includes `calibration_energy_j`.
    pub energy_j: f64,
    pub calibration_energy_j: f64,
    pub latency_s: f64,
}

/// BN scale applied by the broadband MR.
#[derive(Debug, Clone, Copy)]
pub enum BnScale<'a> {
    Uniform(f64),
    PerRow(&'a [f64]),
}

impl BnScale<'_> {
    fn at(&self, row: usize) -> f64 {
        match self {
            BnScale::Uniform(s) => *s,
            BnScale::PerRow(s) => s[row],
        }
    }
}

/// Accumulates the passes of one layer.
#[derive(Debug, Clone)]
pub struct LayerScheduler {
    vdu: Vdu,
    kind: UnitKind,
    chunk: usize,
    units: usize,
    quant: QuantSpec,
    calibration_energy: f64,
    passes: u64,
    gated: u64,
    active: u64,
    bits: u64,
    energy: f64,
}

impl LayerScheduler {
    pub fn new(kind: UnitKind, cfg: &VduConfig, dev: &DeviceParams, quant: &QuantSpec) -> Self {
        let units = cfg.units(kind);
        Self {
            vdu: Vdu::new(kind, dev, quant),
            kind,
            chunk: cfg.chunk(kind),
            units,
            quant: *quant,
            calibration_energy: dev.to_calibration_energy(units),
            passes: 0,
            gated: 0,
            active: 0,
            bits: 0,
            energy: 0.0,
        }
    }

    /// Runs every chunk of `item` and returns one accumulated value per row.
    ///
    /// Operands are used as given; quantize them beforehand if needed.
    pub fn push(&mut self, item: &CompressedGemm, scale: BnScale<'_>) -> Result<Vec<f64>> {
        let width = item.width();
        let segments = segment_count(width, self.chunk);
        let dense = item.dense();
        let mut out = Vec::with_capacity(item.output_dim());
        for r in 0..item.output_dim() {
            let row = item.row(r);
            let s = scale.at(r);
            let mut acc = 0.0;
            for seg in 0..segments {
                let lo = seg * self.chunk;
                let hi = (lo + self.chunk).min(width);
                let pass = self.vdu.pass(&dense[lo..hi], &row[lo..hi], s)?;
                acc += pass.value;
                self.passes += 1;
                self.gated += (pass.vcsels_gated + self.chunk - (hi - lo)) as u64;
                self.active += pass.active_lanes as u64;
                self.bits += pass_bits(pass.active_lanes, &self.quant);
                self.energy += pass.energy_j;
            }
            out.push(acc);
        }
        Ok(out)
    }

    pub fn passes(&self) -> u64 {
        self.passes
    }

    pub fn finish(self, layer: usize) -> LayerRecord {
        let waves = self.passes.div_ceil(self.units as u64);
        let calibration = if self.passes > 0 {
            self.calibration_energy
        } else {
            0.0
        };
        LayerRecord {
            layer,
            kind: self.kind,
            passes: self.passes,
            waves,
            gated: self.gated,
            active_lanes: self.active,
            bits: self.bits,
            energy_j: self.energy + calibration,
            calibration_energy_j: calibration,
            latency_s: waves as f64 * self.vdu.latency(),
        }
    }
}

/// Schedules a whole layer's work list with unit BN scale.
pub fn schedule_layer(
    layer: usize,
    work: &[CompressedGemm],
    kind: UnitKind,
    cfg: &VduConfig,
    dev: &DeviceParams,
    quant: &QuantSpec,
) -> Result<(LayerRecord, Vec<Vec<f64>>)> {
    let mut sched = LayerScheduler::new(kind, cfg, dev, quant);
    let outputs = work
        .iter()
        .map(|item| sched.push(item, BnScale::Uniform(1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok((sched.finish(layer), outputs))
}

/// Throughput and efficiency figures derived from totals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub fps: f64,
    pub avg_power_w: f64,
    pub fps_per_watt: f64,
    /// Joules per bit.
    pub epb: f64,
}

impl Metrics {
    /// All figures are zero when `latency_s` is zero; `epb` is zero when no bits moved.
    pub fn from_totals(frames: usize, energy_j: f64, latency_s: f64, bits: u64) -> Self {
        let epb = if bits > 0 { energy_j / bits as f64 } else { 0.0 };
        if latency_s <= 0.0 {
            return Self {
                epb,
                ..Self::default()
            };
        }
        let fps = frames as f64 / latency_s;
        let avg_power_w = energy_j / latency_s;
        let fps_per_watt = if avg_power_w > 0.0 { fps / avg_power_w } else { 0.0 };
        Self {
            fps,
            avg_power_w,
            fps_per_watt,
            epb,
        }
    }
}

/// Constant costs per electronic operation. Zero by default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElectronicCosts {
    pub energy_per_op_j: f64,
    pub latency_per_op_s: f64,
}

/// Everything besides the model that a simulation depends on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimSetup {
    pub arch: VduConfig,
    pub device: DeviceParams,
    pub quant: QuantSpec,
    pub electronic: ElectronicCosts,
}

/// Per-layer records, totals and derived metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub model: String,
    pub arch: VduConfig,
    pub quant: QuantSpec,
    pub frames: usize,
    pub layers: Vec<LayerRecord>,
    pub electronic_ops: u64,
    pub total_passes: u64,
    pub total_gated: u64,
    pub total_energy_j: f64,
    pub total_latency_s: f64,
    pub bits_processed: u64,
    pub metrics: Metrics,
}

impl SimReport {
    fn build(model: &str, setup: &SimSetup, frames: usize, layers: Vec<LayerRecord>, electronic_ops: u64) -> Self {
        let e = &setup.electronic;
        let total_energy_j =
            layers.iter().map(|l| l.energy_j).sum::<f64>() + electronic_ops as f64 * e.energy_per_op_j;
        let total_latency_s =
            layers.iter().map(|l| l.latency_s).sum::<f64>() + electronic_ops as f64 * e.latency_per_op_s;
        let bits_processed = layers.iter().map(|l| l.bits).sum();
        Self {
            model: model.to_string(),
            arch: setup.arch,
            quant: setup.quant,
            frames,
            total_passes: layers.iter().map(|l| l.passes).sum(),
            total_gated: layers.iter().map(|l| l.gated).sum(),
            layers,
            electronic_ops,
            total_energy_j,
            total_latency_s,
            bits_processed,
            metrics: Metrics::from_totals(frames, total_energy_j, total_latency_s, bits_processed),
        }
    }

    /// Sums several single-frame reports of the same model into one.
    pub fn aggregate(reports: &[SimReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Report("nothing to aggregate".into()))?;
        let mut layers = first.layers.clone();
        for r in &reports[1..] {
            if r.layers.len() != layers.len() || r.arch != first.arch || r.quant != first.quant {
                return Err(Error::Report("reports are not from the same setup".into()));
            }
            for (acc, l) in layers.iter_mut().zip(&r.layers) {
                acc.passes += l.passes;
                acc.waves += l.waves;
                acc.gated += l.gated;
                acc.active_lanes += l.active_lanes;
                acc.bits += l.bits;
                acc.energy_j += l.energy_j;
                acc.calibration_energy_j += l.calibration_energy_j;
                acc.latency_s += l.latency_s;
            }
        }
        let frames = reports.iter().map(|r| r.frames).sum();
        let ops = reports.iter().map(|r| r.electronic_ops).sum();
        let setup = SimSetup {
            arch: first.arch,
            quant: first.quant,
            ..SimSetup::default()
        };
        let mut out = Self::build(&first.model, &setup, frames, layers, 0);
        // Electronic costs are already folded into each report's totals.
        out.electronic_ops = ops;
        out.total_energy_j = reports.iter().map(|r| r.total_energy_j).sum();
        out.total_latency_s = reports.iter().map(|r| r.total_latency_s).sum();
        out.metrics = Metrics::from_totals(frames, out.total_energy_j, out.total_latency_s, out.bits_processed);
        Ok(out)
    }
}

/// Report plus the functional output of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub report: SimReport,
    pub output: Tensor,
}

/// The quantization implied by an artifact: weight bits from its codebooks,
/// 16 bits otherwise.
pub fn quant_for(artifact: &Artifact, exact_mode: bool) -> QuantSpec {
    QuantSpec {
        weight_bits: artifact
            .codebooks
            .as_ref()
            .map_or(16, |c| c.dac_resolution().bits),
        activation_bits: 16,
        exact_mode,
    }
}

fn quantized(t: &Tensor, bits: u32, exact: bool) -> Tensor {
    if exact {
        return t.clone();
    }
    let m = t.max_abs();
    let mut q = t.clone();
    for v in q.data_mut() {
        *v = quantize(*v, bits, m);
    }
    q
}

/// Runs `artifact` on `input` through the photonic pipeline.
pub fn simulate(artifact: &Artifact, input: &Tensor, setup: &SimSetup) -> Result<Simulation> {
    setup.device.validate()?;
    setup.quant.validate()?;
    setup.arch.validate()?;
    let model = artifact.model.effective_model();
    model.validate()?;
    if input.shape() != model.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "input shape {:?} does not match model input {:?}",
            input.shape(),
            model.input_shape
        )));
    }
    if let Some(books) = &artifact.codebooks {
        for layer in model.parameterized_layers() {
            let has_weights = model.weight(layer).is_some_and(|w| w.count_zeros() < w.len());
            if has_weights && !books.layers.contains_key(&layer) {
                return Err(Error::Clustering(format!(
                    "layer {layer} has weights but no codebook"
                )));
            }
        }
    }

    let quant = setup.quant;
    let mut records = Vec::new();
    let mut electronic_ops = 0u64;
    let mut x = input.clone();
    let mut i = 0;
    while i < model.layers.len() {
        let folded = match model.layers.get(i + 1) {
            Some(LayerSpec::BatchNorm { scale, shift }) if model.layers[i].is_parameterized() => Some((
                model.tensor(scale)?.data().to_vec(),
                model.tensor(shift)?.data().to_vec(),
            )),
            _ => None,
        };
        let step = if folded.is_some() { 2 } else { 1 };
        match &model.layers[i] {
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let w = quantized(model.tensor(weight)?, quant.weight_bits, quant.exact_mode);
                let xq = quantized(&x, quant.activation_bits, quant.exact_mode);
                let unrolled = unroll_conv(&w, &xq, *stride, *padding)?;
                let [oc, oh, ow] = unrolled.output_map_shape();
                let bias = bias.as_deref().map(|b| model.tensor(b)).transpose()?;
                let mut sched = LayerScheduler::new(UnitKind::Conv, &setup.arch, &setup.device, &quant);
                let mut out = Vec::with_capacity(oc * oh * ow);
                for c in 0..oc {
                    let item = compress_conv_channel(&unrolled, c);
                    let (s, shift) = folded.as_ref().map_or((1.0, 0.0), |(s, t)| (s[c], t[c]));
                    let offset = s * bias.map_or(0.0, |b| b.data()[c]) + shift;
                    let values = sched.push(&item, BnScale::Uniform(s))?;
                    out.extend(values.into_iter().map(|v| v + offset));
                }
                electronic_ops += electronic_ops_for(sched.passes(), out.len(), bias.is_some() || folded.is_some());
                records.push(sched.finish(i));
                x = Tensor::new(vec![oc, oh, ow], out)?;
            }
            LayerSpec::FullyConnected { weight, bias } => {
                let w = quantized(model.tensor(weight)?, quant.weight_bits, quant.exact_mode);
                let xq = quantized(&x, quant.activation_bits, quant.exact_mode);
                let item = compress_fc(&w, xq.data())?;
                let bias = bias.as_deref().map(|b| model.tensor(b)).transpose()?;
                let rows = item.output_dim();
                let (scales, shifts) = folded.unwrap_or_else(|| (vec![1.0; rows], vec![0.0; rows]));
                if scales.len() != rows {
                    return Err(Error::Shape(format!(
                        "batch norm after layer {i} has {} channels, layer has {rows} outputs",
                        scales.len()
                    )));
                }
                let mut sched = LayerScheduler::new(UnitKind::Fc, &setup.arch, &setup.device, &quant);
                let values = sched.push(&item, BnScale::PerRow(&scales))?;
                let out: Vec<f64> = values
                    .into_iter()
                    .enumerate()
                    .map(|(r, v)| v + scales[r] * bias.map_or(0.0, |b| b.data()[r]) + shifts[r])
                    .collect();
                electronic_ops += electronic_ops_for(sched.passes(), out.len(), true);
                records.push(sched.finish(i));
                x = Tensor::new(vec![rows], out)?;
            }
            LayerSpec::BatchNorm { scale, shift } => {
                x = batch_norm(&x, model.tensor(scale)?.data(), model.tensor(shift)?.data());
                electronic_ops += x.len() as u64;
            }
            LayerSpec::Relu => {
                x = relu(&x);
                electronic_ops += x.len() as u64;
            }
            LayerSpec::MaxPool { window, stride } => {
                x = max_pool(&x, *window, *stride)?;
                electronic_ops += x.len() as u64;
            }
        }
        i += step;
    }
    Ok(Simulation {
        report: SimReport::build(&model.name, setup, 1, records, electronic_ops),
        output: x,
    })
}

/// Partial-sum additions beyond the first pass of each output, plus one
/// offset add per output when there is a bias or BN shift.
fn electronic_ops_for(passes: u64, outputs: usize, offset: bool) -> u64 {
    let outputs = outputs as u64;
    passes.saturating_sub(outputs) + if offset { outputs } else { 0 }
}

/// Runs an already-built model directly, without masks or codebooks.
pub fn simulate_model(model: &ModelIR, input: &Tensor, setup: &SimSetup) -> Result<Simulation> {
    simulate(&Artifact::plain(model.clone()), input, setup)
}
