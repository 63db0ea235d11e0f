//! Machine profiles of the reference clusters and the degree-dependent
//! compute-rate model.

use serde::{Deserialize, Serialize};

use super::{GammaError, MachineProfile};

/// `rate(N) = peak (1 - overhead / (N + 1))` [MFlop/s per core].
///
/// Larger elements amortize per-element overheads, so the rate saturates
/// towards `peak` as the degree grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeRateModel {
    pub peak_mflops: f64,
    pub overhead: f64,
}

impl DegreeRateModel {
    pub fn rate(&self, n: usize) -> f64 {
        self.peak_mflops * (1.0 - self.overhead / (n as f64 + 1.0))
    }
}

/// Least-squares fit of [`DegreeRateModel`] to `(degree, rate)` points.
///
/// The model is linear in `1 / (N + 1)`: `rate = peak - peak c / (N + 1)`.
pub fn fit_degree_overhead(points: &[(usize, f64)]) -> Result<DegreeRateModel, GammaError> {
    if points.len() < 2 {
        return Err(GammaError::NoData);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(d, _)| 1.0 / (d as f64 + 1.0)).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, r)| r).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(GammaError::OutOfRange {
            what: "distinct degrees",
            value: 1.0,
            range: ">= 2",
        });
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let peak = my - slope * mx;
    if !(peak > 0.0) {
        return Err(GammaError::OutOfRange {
            what: "fitted peak rate",
            value: peak,
            range: "> 0",
        });
    }
    Ok(DegreeRateModel {
        peak_mflops: peak,
        overhead: -slope / peak,
    })
}

/// Aggregate rate of four processing elements on the Opteron cluster for
/// `8 x 8 x 8` elements, by degree [MFlop/s].
pub const DEGREE_SWEEP_RATES: [(usize, f64); 6] =
    [(6, 1624.0), (7, 2580.0), (8, 3100.0), (9, 3700.0), (10, 4150.0), (11, 4390.0)];
pub const DEGREE_SWEEP_RANKS: usize = 4;

pub const PRESET_NAMES: [&str; 4] = ["pleiades", "pleiades2", "pleiades2plus", "gele"];

/// Per-message latency of both Ethernet networks [s].
const ETHERNET_LATENCY: f64 = 60e-6;
/// Sustained single-core rate on the GbE Xeon cluster [MFlop/s].
const XEON_RATE: f64 = 638.0;

pub fn machine_preset(name: &str) -> Result<MachineProfile, GammaError> {
    // the Pentium 4 and Woodcrest rates follow from equal work per step:
    // rate = 638 * T_P(Xeon) / T_P(machine)
    Ok(match name {
        "pleiades" => MachineProfile::new("pleiades", XEON_RATE * 7.56 / 13.58, 12.0, ETHERNET_LATENCY),
        "pleiades2" => MachineProfile::new("pleiades2", XEON_RATE, 101.0, ETHERNET_LATENCY),
        "pleiades2plus" => {
            MachineProfile::new("pleiades2plus", XEON_RATE * 7.56 / 7.93, 101.0, ETHERNET_LATENCY).with_node(4, 4.0)
        }
        "gele" => {
            let per_core: Vec<(usize, f64)> = DEGREE_SWEEP_RATES
                .iter()
                .map(|&(n, r)| (n, r / DEGREE_SWEEP_RANKS as f64))
                .collect();
            let model = fit_degree_overhead(&per_core)?;
            MachineProfile::new("gele", model.rate(8), 1000.0, 10e-6)
                .with_node(2, 1.0)
                .with_degree_rate(model)
        }
        other => return Err(GammaError::UnknownPreset(other.to_string())),
    })
}
