//! The Gamma model: speedup and efficiency from the ratio of compute time
//! to communication time, time prediction for a machine/application pair,
//! and calibration of the communication parameters from measurements.

mod calibration;
mod presets;
mod usage;

pub use calibration::{calibrate, calibrate_table, BandwidthModel, CalibrationError, CalibrationInput, GammaFit};
pub use presets::{fit_degree_overhead, machine_preset, DegreeRateModel, DEGREE_SWEEP_RANKS, DEGREE_SWEEP_RATES, PRESET_NAMES};
pub use usage::{analyze_usage_histogram, normalize_node_usage, NodeUsage, UsageHistogram, DEFAULT_BIN_WIDTH, DEFAULT_WINDOW_SECONDS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::AppProfile;
use crate::sem::WORD_BYTES;

#[derive(Debug, Error, PartialEq)]
pub enum GammaError {
    #[error("{what} = {value} is out of range ({range})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("invalid machine profile {name:?}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("no samples to analyze")]
    NoData,
    #[error("unknown machine preset {0:?}")]
    UnknownPreset(String),
}

/// `Gamma = T_P / (T_C + T_L)`; `f64::INFINITY` marks a communication-free run.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gamma(#[serde(with = "crate::serde_ratio")] f64);

impl Gamma {
    pub const SATURATED: Gamma = Gamma(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, GammaError> {
        if value > 0.0 && !value.is_nan() {
            Ok(Self(value))
        } else {
            Err(GammaError::OutOfRange {
                what: "gamma",
                value,
                range: "> 0",
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_saturated(self) -> bool {
        self.0.is_infinite()
    }
}

/// `S = P / (1 + 1/Gamma)`.
pub fn predict_speedup(ranks: usize, gamma: Gamma) -> f64 {
    ranks as f64 * efficiency(gamma)
}

/// `E = 1 / (1 + 1/Gamma)`.
pub fn efficiency(gamma: Gamma) -> f64 {
    1.0 / (1.0 + 1.0 / gamma.0)
}

/// Inverse of [`efficiency`]: `Gamma = E / (1 - E)`.
pub fn gamma_from_efficiency(e: f64) -> Result<Gamma, GammaError> {
    if !(e > 0.0 && e < 1.0) {
        return Err(GammaError::OutOfRange {
            what: "efficiency",
            value: e,
            range: "(0, 1)",
        });
    }
    Gamma::new(e / (1.0 - e))
}

/// Per-step time split. `total` is always the sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDecomposition {
    #[serde(rename = "T")]
    pub total: f64,
    #[serde(rename = "T_P")]
    pub compute: f64,
    #[serde(rename = "T_C")]
    pub communication: f64,
    #[serde(rename = "T_L")]
    pub latency: f64,
}

impl TimeDecomposition {
    pub fn new(compute: f64, communication: f64, latency: f64) -> Result<Self, GammaError> {
        for (what, v) in [("T_P", compute), ("T_C", communication), ("T_L", latency)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(GammaError::OutOfRange {
                    what,
                    value: v,
                    range: ">= 0",
                });
            }
        }
        Ok(Self {
            total: compute + communication + latency,
            compute,
            communication,
            latency,
        })
    }

    pub fn gamma(&self) -> Gamma {
        gamma_from_times(self)
    }
}

/// `Gamma = T_P / (T_C + T_L)`, saturated when nothing is communicated.
pub fn gamma_from_times(decomp: &TimeDecomposition) -> Gamma {
    let overhead = decomp.communication + decomp.latency;
    if overhead == 0.0 {
        Gamma::SATURATED
    } else {
        Gamma(decomp.compute / overhead)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineProfile {
    pub name: String,
    /// Sustained per-core compute rate [MFlop/s].
    pub core_rate_mflops: f64,
    /// Link bandwidth [MB/s, 10^6 bytes].
    pub link_bandwidth_mbs: f64,
    /// Latency per message [s].
    pub latency_s: f64,
    pub cores_per_node: usize,
    /// Ranks sharing one network link.
    pub link_sharing: f64,
    /// Optional degree-dependent compute rate replacing `core_rate_mflops`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree_rate: Option<DegreeRateModel>,
}

impl MachineProfile {
    pub fn new(name: &str, core_rate_mflops: f64, link_bandwidth_mbs: f64, latency_s: f64) -> Self {
        Self {
            name: name.to_string(),
            core_rate_mflops,
            link_bandwidth_mbs,
            latency_s,
            cores_per_node: 1,
            link_sharing: 1.0,
            degree_rate: None,
        }
    }

    pub fn with_node(mut self, cores_per_node: usize, link_sharing: f64) -> Self {
        self.cores_per_node = cores_per_node;
        self.link_sharing = link_sharing;
        self
    }

    pub fn with_degree_rate(mut self, model: DegreeRateModel) -> Self {
        self.degree_rate = Some(model);
        self
    }

    pub fn validate(&self) -> Result<(), GammaError> {
        let bad = |reason: &str| {
            Err(GammaError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.core_rate_mflops > 0.0 && self.core_rate_mflops.is_finite()) {
            return bad("core rate must be positive");
        }
        if !(self.link_bandwidth_mbs > 0.0 && self.link_bandwidth_mbs.is_finite()) {
            return bad("link bandwidth must be positive");
        }
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return bad("latency must be non-negative");
        }
        if self.cores_per_node == 0 {
            return bad("cores per node must be at least 1");
        }
        if !(self.link_sharing >= 1.0 && self.link_sharing.is_finite()) {
            return bad("link sharing must be at least 1");
        }
        if let Some(m) = &self.degree_rate {
            if !(m.peak_mflops > 0.0) || !(m.overhead >= 0.0) {
                return bad("degree rate model needs a positive peak and non-negative overhead");
            }
        }
        Ok(())
    }

    /// Bandwidth available to one rank [MB/s].
    pub fn effective_bandwidth(&self) -> f64 {
        self.link_bandwidth_mbs / self.link_sharing
    }

    /// Compute rate for elements of degree `n` [MFlop/s].
    pub fn rate_for_degree(&self, n: usize) -> f64 {
        match &self.degree_rate {
            Some(m) => m.rate(n),
            None => self.core_rate_mflops,
        }
    }
}

/// Per-step time of `app` on `ranks` ranks of `machine`.
pub fn predict_time(
    machine: &MachineProfile,
    app: &AppProfile,
    ranks: usize,
    messages_per_step: u64,
) -> Result<TimeDecomposition, GammaError> {
    machine.validate()?;
    if ranks == 0 {
        return Err(GammaError::OutOfRange {
            what: "ranks",
            value: 0.0,
            range: ">= 1",
        });
    }
    let p = ranks as f64;
    // per-rank share first, so equal per-rank loads give bitwise-equal times
    let compute = app.flops_per_step as f64 / p / (machine.core_rate_mflops * 1e6);
    let communication =
        (app.words_per_step * WORD_BYTES) as f64 / (p * machine.effective_bandwidth() * 1e6);
    let latency = messages_per_step as f64 * machine.latency_s;
    TimeDecomposition::new(compute, communication, latency)
}
