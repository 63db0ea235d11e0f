//! CPU-usage samples: histograms over fixed windows and per-rank
//! normalization of node-level readings.

use serde::{Deserialize, Serialize};

use super::{gamma_from_efficiency, GammaError};

pub const DEFAULT_BIN_WIDTH: f64 = 0.01;
/// Length of one usage sampling window [s].
pub const DEFAULT_WINDOW_SECONDS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageHistogram {
    pub bin_width: f64,
    /// `(lower edge, count)` for every bin covering `[0, 1]`.
    pub bins: Vec<(f64, u64)>,
    pub samples: usize,
    pub mean_efficiency: f64,
    /// `E / (1 - E)` of the mean; `"saturated"` when the mean is 1.
    #[serde(with = "crate::serde_ratio")]
    pub gamma: f64,
}

/// Bin index of `v`; the small slack keeps values such as `0.29` out of
/// the bin below when `v / width` lands just under an integer.
fn bin_of(v: f64, width: f64, bins: usize) -> usize {
    ((v / width + 1e-9).floor() as usize).min(bins - 1)
}

/// Histogram of per-window efficiencies in `[x, x + bin_width)` buckets,
/// with the mean efficiency and the corresponding Gamma.
pub fn analyze_usage_histogram(samples: &[f64], bin_width: f64) -> Result<UsageHistogram, GammaError> {
    if samples.is_empty() {
        return Err(GammaError::NoData);
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(GammaError::OutOfRange {
            what: "bin width",
            value: bin_width,
            range: "(0, 1]",
        });
    }
    if let Some(&bad) = samples.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(GammaError::OutOfRange {
            what: "usage sample",
            value: bad,
            range: "[0, 1]",
        });
    }
    let n_bins = (1.0 / bin_width + 1e-9).floor() as usize + 1;
    let mut counts = vec![0u64; n_bins];
    for &v in samples {
        counts[bin_of(v, bin_width, n_bins)] += 1;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let gamma = if mean >= 1.0 {
        f64::INFINITY
    } else if mean <= 0.0 {
        0.0
    } else {
        gamma_from_efficiency(mean)?.value()
    };
    Ok(UsageHistogram {
        bin_width,
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (k as f64 * bin_width, c))
            .collect(),
        samples: samples.len(),
        mean_efficiency: mean,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub usage: f64,
    /// The raw reading implied more than full use of the active cores.
    pub saturated: bool,
}

/// Converts a node-wide usage reading into per-active-rank usage.
pub fn normalize_node_usage(raw: f64, active_ranks: usize, cores_per_node: usize) -> Result<NodeUsage, GammaError> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(GammaError::OutOfRange {
            what: "raw node usage",
            value: raw,
            range: "[0, 1]",
        });
    }
    if active_ranks == 0 || active_ranks > cores_per_node {
        return Err(GammaError::OutOfRange {
            what: "active ranks",
            value: active_ranks as f64,
            range: "1 ..= cores per node",
        });
    }
    let usage = raw * cores_per_node as f64 / active_ranks as f64;
    Ok(NodeUsage {
        usage: usage.min(1.0),
        saturated: usage >= 1.0,
    })
}
