//! Run configuration from dotted `key = value` files.
//!
//! The file is TOML; tables and dotted keys are flattened, so `[arch]\nn = 6`
//! and `arch.n = 6` are equivalent. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::explore::{ExplorationGrid, LayerSubset, Objective};
use crate::photonic::{Device, DeviceParams};
use crate::report::ReportFormat;
use crate::schedule::{SimSetup, VduConfig};

/// Settings for the exploration subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub sparsity: Vec<f64>,
    pub clusters: Vec<Option<usize>>,
    pub layers: Vec<LayerSubset>,
    /// Empty means "use the run's arch".
    pub arch: Vec<VduConfig>,
    pub objective: Objective,
    pub eval_count: usize,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            sparsity: vec![0.0, 0.3, 0.5, 0.7],
            clusters: vec![None, Some(64), Some(16)],
            layers: vec![LayerSubset::All],
            arch: Vec::new(),
            objective: Objective::FpsPerWatt,
            eval_count: 4,
            seed: 0,
        }
    }
}

impl ExploreConfig {
    pub fn grid(&self, fallback_arch: VduConfig) -> ExplorationGrid {
        ExplorationGrid {
            sparsity: self.sparsity.clone(),
            clusters: self.clusters.clone(),
            layers: self.layers.clone(),
            arch: if self.arch.is_empty() {
                vec![fallback_arch]
            } else {
                self.arch.clone()
            },
            objective: self.objective,
        }
    }
}

/// Everything a command can be configured with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub setup: SimSetup,
    /// Overrides the weight resolution implied by the codebooks.
    pub weight_bits: Option<u32>,
    pub sparsity: Option<f64>,
    pub layer_sparsity: BTreeMap<usize, f64>,
    pub clusters: Option<usize>,
    pub explore: ExploreConfig,
    pub input_seed: u64,
    pub input_path: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &Value::Table(table), &mut flat);
        let mut cfg = Self::default();
        for (key, value) in &flat {
            cfg.apply(key, value)?;
        }
        cfg.setup.device.validate()?;
        cfg.setup.arch.validate()?;
        cfg.setup.quant.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["device", "to_power_scale"] => self.setup.device.to_power_scale = float(key, v)?,
            ["device", "eo_tuning", field] => {
                let d = &mut self.setup.device;
                match *field {
                    "latency_ns" => d.eo_tuning.latency_s = float(key, v)? * 1e-9,
                    "power_uw_per_nm" => d.eo_tuning.power_w = float(key, v)? * 1e-6,
                    "shift_nm" => d.eo_shift_nm = float(key, v)?,
                    _ => return Err(unknown(key)),
                }
            }
            ["device", "to_tuning", field] => {
                let d = &mut self.setup.device;
                match *field {
                    "latency_us" => d.to_tuning.latency_s = float(key, v)? * 1e-6,
                    "power_mw_per_fsr" => d.to_tuning.power_w = float(key, v)? * 1e-3,
                    "fsr_per_bank" => d.to_fsr_per_bank = float(key, v)?,
                    _ => return Err(unknown(key)),
                }
            }
            ["device", name, field] => {
                let device = device_mut(&mut self.setup.device, name).ok_or_else(|| unknown(key))?;
                match *field {
                    "latency_ns" => device.latency_s = float(key, v)? * 1e-9,
                    "power_mw" => device.power_w = float(key, v)? * 1e-3,
                    _ => return Err(unknown(key)),
                }
            }
            ["arch", field] => {
                let a = &mut self.setup.arch;
                let slot = match *field {
                    "n" => &mut a.n,
                    "m" => &mut a.m,
                    "N" => &mut a.conv_units,
                    "K" => &mut a.fc_units,
                    _ => return Err(unknown(key)),
                };
                *slot = uint(key, v)?;
            }
            ["quant", "weight_bits"] => self.weight_bits = Some(uint(key, v)?),
            ["quant", "activation_bits"] => self.setup.quant.activation_bits = uint(key, v)?,
            ["quant", "exact_mode"] => self.setup.quant.exact_mode = boolean(key, v)?,
            ["electronic", "energy_per_op_j"] => self.setup.electronic.energy_per_op_j = float(key, v)?,
            ["electronic", "latency_per_op_s"] => self.setup.electronic.latency_per_op_s = float(key, v)?,
            ["sparsity"] => self.sparsity = Some(fraction(key, v)?),
            ["layer", index, "sparsity"] => {
                let i = index.parse().map_err(|_| unknown(key))?;
                self.layer_sparsity.insert(i, fraction(key, v)?);
            }
            ["clusters"] => self.clusters = Some(uint(key, v)?),
            ["explore", field] => self.apply_explore(key, field, v)?,
            ["input", "seed"] => self.input_seed = uint(key, v)?,
            ["input", "path"] => self.input_path = Some(string(key, v)?.into()),
            ["io", "model"] => self.model = Some(string(key, v)?.into()),
            ["io", "out"] => self.out = Some(string(key, v)?.into()),
            ["io", "format"] => self.format = Some(string(key, v)?.parse()?),
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn apply_explore(&mut self, key: &str, field: &str, v: &Value) -> Result<()> {
        let e = &mut self.explore;
        match field {
            "sparsity" => {
                e.sparsity = array(key, v)?
                    .iter()
                    .map(|x| fraction(key, x))
                    .collect::<Result<_>>()?
            }
            "clusters" => {
                e.clusters = array(key, v)?
                    .iter()
                    .map(|x| match x {
                        Value::String(s) if s == "none" => Ok(None),
                        _ => uint(key, x).map(Some),
                    })
                    .collect::<Result<_>>()?
            }
            "layers" => {
                e.layers = array(key, v)?
                    .iter()
                    .map(|x| string(key, x)?.parse())
                    .collect::<Result<_>>()?
            }
            "arch" => {
                e.arch = array(key, v)?
                    .iter()
                    .map(|x| {
                        let quad = array(key, x)?
                            .iter()
                            .map(|y| uint(key, y))
                            .collect::<Result<Vec<usize>>>()?;
                        match quad.as_slice() {
                            &[n, m, big_n, big_k] => Ok(VduConfig::new(n, m, big_n, big_k)),
                            _ => Err(Error::Config(format!("`{key}` entries must be [n, m, N, K]"))),
                        }
                    })
                    .collect::<Result<_>>()?
            }
            "objective" => e.objective = string(key, v)?.parse()?,
            "eval_count" => e.eval_count = uint(key, v)?,
            "seed" => e.seed = uint(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }
}

fn device_mut<'a>(d: &'a mut DeviceParams, name: &str) -> Option<&'a mut Device> {
    Some(match name {
        "vcsel" => &mut d.vcsel,
        "photodetector" => &mut d.photodetector,
        "dac16" => &mut d.dac16,
        "dac6" => &mut d.dac6,
        "adc16" => &mut d.adc16,
        _ => return None,
    })
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}`"))
}

fn mismatch(key: &str, expected: &str) -> Error {
    Error::Config(format!("`{key}` must be {expected}"))
}

fn float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(mismatch(key, "a number")),
    }
}

fn fraction(key: &str, v: &Value) -> Result<f64> {
    let f = float(key, v)?;
    if (0.0..=1.0).contains(&f) {
        Ok(f)
    } else {
        Err(mismatch(key, "in [0, 1]"))
    }
}

fn uint<T: TryFrom<i64>>(key: &str, v: &Value) -> Result<T> {
    match v {
        Value::Integer(i) if *i >= 0 => T::try_from(*i).map_err(|_| mismatch(key, "a smaller integer")),
        _ => Err(mismatch(key, "a non-negative integer")),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| mismatch(key, "true or false"))
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| mismatch(key, "a string"))
}

fn array<'a>(key: &str, v: &'a Value) -> Result<&'a [Value]> {
    v.as_array()
        .map(Vec::as_slice)
        .ok_or_else(|| mismatch(key, "an array"))
}
