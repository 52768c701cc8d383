//! Energy, latency and functional model of one vector-dot-product unit.
//!
//! A pass drives one chunk: the dense operand sets VCSEL amplitudes, the
//! sparse operand tunes the MR bank, a broadband MR applies the batch-norm
//! scale and a photodetector plus ADC read out the accumulated sum. Lanes
//! whose sparse operand is zero are power gated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latency and power of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub latency_s: f64,
    pub power_w: f64,
}

impl Device {
    pub const fn new(latency_s: f64, power_w: f64) -> Self {
        Self { latency_s, power_w }
    }

    pub fn energy_j(&self) -> f64 {
        self.latency_s * self.power_w
    }
}

/// Device latencies and powers. Defaults are typical values for each device class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Power is per nm of resonance shift.
    pub eo_tuning: Device,
    /// Average EO shift per tuning event, in nm.
    pub eo_shift_nm: f64,
    /// Power is per FSR.
    pub to_tuning: Device,
    /// FSRs tuned per MR bank during calibration.
    pub to_fsr_per_bank: f64,
    /// Fraction of TO power actually spent, in (0, 1].
    pub to_power_scale: f64,
    pub vcsel: Device,
    pub photodetector: Device,
    pub dac16: Device,
    pub dac6: Device,
    pub adc16: Device,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            eo_tuning: Device::new(20e-9, 4e-6),
            eo_shift_nm: 1.0,
            to_tuning: Device::new(4e-6, 27.5e-3),
            to_fsr_per_bank: 1.0,
            to_power_scale: 1.0,
            vcsel: Device::new(0.07e-9, 1.3e-3),
            photodetector: Device::new(5.8e-12, 2.8e-3),
            dac16: Device::new(0.33e-9, 40e-3),
            dac6: Device::new(0.25e-9, 3e-3),
            adc16: Device::new(14e-9, 62e-3),
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let devices = [
            ("eo_tuning", self.eo_tuning),
            ("to_tuning", self.to_tuning),
            ("vcsel", self.vcsel),
            ("photodetector", self.photodetector),
            ("dac16", self.dac16),
            ("dac6", self.dac6),
            ("adc16", self.adc16),
        ];
        for (name, d) in devices {
            if !(d.latency_s > 0.0 && d.latency_s.is_finite()) {
                return Err(Error::Config(format!("device.{name} latency must be positive")));
            }
            if !(d.power_w > 0.0 && d.power_w.is_finite()) {
                return Err(Error::Config(format!("device.{name} power must be positive")));
            }
        }
        if !(self.eo_shift_nm > 0.0 && self.eo_shift_nm.is_finite()) {
            return Err(Error::Config("device.eo_tuning.shift_nm must be positive".into()));
        }
        if !(self.to_fsr_per_bank > 0.0 && self.to_fsr_per_bank.is_finite()) {
            return Err(Error::Config("device.to_tuning.fsr_per_bank must be positive".into()));
        }
        if !(self.to_power_scale > 0.0 && self.to_power_scale <= 1.0) {
            return Err(Error::Config("device.to_power_scale must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Energy of one EO tuning event.
    pub fn eo_event_energy(&self) -> f64 {
        self.eo_tuning.power_w * self.eo_shift_nm * self.eo_tuning.latency_s
    }

    /// TO calibration energy for `banks` MR banks.
    pub fn to_calibration_energy(&self, banks: usize) -> f64 {
        self.to_tuning.power_w
            * self.to_power_scale
            * self.to_fsr_per_bank
            * self.to_tuning.latency_s
            * banks as f64
    }

    /// DAC used for operands of the given resolution.
    pub fn dac_for_bits(&self, bits: u32) -> Device {
        if bits <= 6 {
            self.dac6
        } else {
            self.dac16
        }
    }
}

/// Which VDU array a pass runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Conv,
    Fc,
}

/// Operand resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub weight_bits: u32,
    pub activation_bits: u32,
    /// Skip quantization entirely.
    pub exact_mode: bool,
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self {
            weight_bits: 16,
            activation_bits: 16,
            exact_mode: false,
        }
    }
}

impl QuantSpec {
    pub fn exact() -> Self {
        Self {
            exact_mode: true,
            ..Self::default()
        }
    }

    /// Bits of the VCSEL-driving operand: weights for CONV, activations for FC.
    pub fn dense_bits(&self, kind: UnitKind) -> u32 {
        match kind {
            UnitKind::Conv => self.weight_bits,
            UnitKind::Fc => self.activation_bits,
        }
    }

    /// Bits of the MR-tuning operand.
    pub fn sparse_bits(&self, kind: UnitKind) -> u32 {
        match kind {
            UnitKind::Conv => self.activation_bits,
            UnitKind::Fc => self.weight_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_bits == 0 || self.activation_bits == 0 {
            return Err(Error::Config("quantization bit widths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Symmetric uniform quantization onto `2^bits` levels spanning
/// `[-max_abs, max_abs]`, round to nearest, ties away from zero.
///
/// Zero always maps to zero. Values outside the range clamp to the end
/// levels. Widths above 52 bits are exact in `f64` and return `value`.
pub fn quantize(value: f64, bits: u32, max_abs: f64) -> f64 {
    if value == 0.0 || bits > 52 || max_abs <= 0.0 {
        return value;
    }
    let top = ((1u64 << bits) - 1) as f64;
    let parity = ((1u64 << bits) - 1) % 2;
    // Levels are max_abs * j / top for j of the same parity as top.
    let a = (value.abs() / max_abs * top).min(top);
    let mut lo = a.floor() as i64;
    if (lo - parity as i64).rem_euclid(2) != 0 {
        lo -= 1;
    }
    let hi = lo + 2;
    let j = if a - lo as f64 >= hi as f64 - a { hi } else { lo };
    let j = (j as f64).min(top);
    value.signum() * max_abs * (j / top)
}

/// Largest magnitude on each side of a layer's passes, used as the DAC range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperandRanges {
    pub dense_max: f64,
    pub sparse_max: f64,
}

/// Outcome of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VduPassResult {
    pub value: f64,
    pub energy_j: f64,
    pub latency_s: f64,
    pub vcsels_gated: usize,
    pub active_lanes: usize,
}

/// Serial datapath latency of one pass.
pub fn per_pass_latency(dev: &DeviceParams, quant: &QuantSpec, kind: UnitKind) -> f64 {
    dev.dac_for_bits(quant.dense_bits(kind)).latency_s
        + dev.eo_tuning.latency_s
        + dev.vcsel.latency_s
        + dev.photodetector.latency_s
        + dev.adc16.latency_s
}

/// A unit with its per-lane and per-pass costs precomputed.
///
/// [`Vdu::pass`] takes operands that are already on the DAC grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vdu {
    kind: UnitKind,
    lane_energy: f64,
    readout_energy: f64,
    bn_energy: f64,
    latency: f64,
}

impl Vdu {
    pub fn new(kind: UnitKind, dev: &DeviceParams, quant: &QuantSpec) -> Self {
        let dense_dac = dev.dac_for_bits(quant.dense_bits(kind));
        let sparse_dac = dev.dac_for_bits(quant.sparse_bits(kind));
        Self {
            kind,
            lane_energy: dense_dac.energy_j()
                + dev.vcsel.energy_j()
                + sparse_dac.energy_j()
                + dev.eo_event_energy(),
            readout_energy: dev.photodetector.energy_j() + dev.adc16.energy_j(),
            bn_energy: dev.eo_event_energy(),
            latency: per_pass_latency(dev, quant, kind),
        }
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    /// Energy of one active lane.
    pub fn lane_energy(&self) -> f64 {
        self.lane_energy
    }

    /// Photodetector plus ADC energy, spent on every pass.
    pub fn readout_energy(&self) -> f64 {
        self.readout_energy
    }

    /// Broadband MR tuning energy, spent on passes with at least one active lane.
    pub fn bn_energy(&self) -> f64 {
        self.bn_energy
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    /// Energy of a pass with `active` ungated lanes.
    pub fn pass_energy(&self, active: usize) -> f64 {
        if active == 0 {
            self.readout_energy
        } else {
            active as f64 * self.lane_energy + self.bn_energy + self.readout_energy
        }
    }

    pub fn pass(&self, dense: &[f64], sparse: &[f64], bn_scale: f64) -> Result<VduPassResult> {
        if dense.len() != sparse.len() {
            return Err(Error::Shape(format!(
                "chunk length mismatch: dense {} vs sparse {}",
                dense.len(),
                sparse.len()
            )));
        }
        let mut sum = 0.0;
        let mut active = 0;
        for (&d, &s) in dense.iter().zip(sparse) {
            if s != 0.0 {
                sum += d * s;
                active += 1;
            }
        }
        Ok(VduPassResult {
            value: bn_scale * sum,
            energy_j: self.pass_energy(active),
            latency_s: self.latency,
            vcsels_gated: dense.len() - active,
            active_lanes: active,
        })
    }
}

/// One pass with quantization applied to both operands.
pub fn vdu_pass(
    dense: &[f64],
    sparse: &[f64],
    bn_scale: f64,
    quant: &QuantSpec,
    dev: &DeviceParams,
    kind: UnitKind,
    ranges: OperandRanges,
) -> Result<VduPassResult> {
    let vdu = Vdu::new(kind, dev, quant);
    if quant.exact_mode {
        return vdu.pass(dense, sparse, bn_scale);
    }
    let qd: Vec<f64> = dense
        .iter()
        .map(|&v| quantize(v, quant.dense_bits(kind), ranges.dense_max))
        .collect();
    let qs: Vec<f64> = sparse
        .iter()
        .map(|&v| quantize(v, quant.sparse_bits(kind), ranges.sparse_max))
        .collect();
    vdu.pass(&qd, &qs, bn_scale)
}
