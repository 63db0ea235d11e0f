//! Fitting the per-step communication volume `W`, the bandwidth ratio
//! `alpha` and the lumped latency `T_L` from measured `(T_P, Gamma)` pairs.
//!
//! Every input satisfies `W / b_eff + T_L = T_P / Gamma` with
//! `b_eff = b_1 / s` for the base network and `b_eff = alpha b_1 / s` for the
//! scaled one. In the unknowns `A = W / b_1`, `B = W / (alpha b_1)` and
//! `T_L` this is linear, with design row `(s [base], s [scaled], 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthModel {
    /// Reference network, bandwidth `b_1`.
    Base,
    /// Faster network, bandwidth `alpha b_1`.
    Scaled,
    /// Faster network with `sharing` ranks on one link, `alpha b_1 / s`.
    ScaledShared,
}

impl BandwidthModel {
    fn is_scaled(self) -> bool {
        !matches!(self, BandwidthModel::Base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub name: String,
    #[serde(rename = "T_P")]
    pub compute_time: f64,
    pub gamma: f64,
    pub bandwidth_model: BandwidthModel,
    #[serde(default = "one")]
    pub sharing: f64,
}

fn one() -> f64 {
    1.0
}

impl CalibrationInput {
    pub fn new(name: &str, compute_time: f64, gamma: f64, bandwidth_model: BandwidthModel, sharing: f64) -> Self {
        Self {
            name: name.to_string(),
            compute_time,
            gamma,
            bandwidth_model,
            sharing,
        }
    }

    fn row(&self) -> [f64; 3] {
        if self.bandwidth_model.is_scaled() {
            [0.0, self.sharing, 1.0]
        } else {
            [self.sharing, 0.0, 1.0]
        }
    }

    /// `T_P / Gamma`, the communication-plus-latency time of the run.
    fn target(&self) -> f64 {
        self.compute_time / self.gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    /// Communicated volume per step [MB].
    pub volume_mb: f64,
    /// The same volume in 8-byte words.
    pub volume_words: f64,
    pub alpha: f64,
    /// Lumped latency time per step [s].
    #[serde(rename = "T_L")]
    pub latency_time: f64,
    pub base_bandwidth_mbs: f64,
    /// `alpha b_1` [MB/s].
    pub scaled_bandwidth_mbs: f64,
    /// `W / b_eff + T_L - T_P / Gamma` per input.
    pub residuals: Vec<(String, f64)>,
    pub residual_norm: f64,
    /// `closed_form` for three inputs, `least_squares` otherwise.
    pub method: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs at least 3 inputs, got {0}")]
    TooFewInputs(usize),
    #[error("calibration needs inputs on both the base and the scaled network")]
    SingleNetwork,
    #[error("input {name:?}: {reason}")]
    InvalidInput { name: String, reason: String },
    #[error("degenerate calibration system: {reason}; redundant inputs: {}", redundant.join(", "))]
    Degenerate { redundant: Vec<String>, reason: String },
    #[error("fit is not physical: {0}")]
    NonPhysical(String),
    #[error("cannot read calibration table: {0}")]
    Parse(String),
}

const ALPHA_RANGE: (f64, f64) = (1.0, 100.0);
const ALPHA_TOLERANCE: f64 = 1e-9;

fn validate(inputs: &[CalibrationInput], base_bandwidth: f64) -> Result<(), CalibrationError> {
    if !(base_bandwidth > 0.0 && base_bandwidth.is_finite()) {
        return Err(CalibrationError::InvalidInput {
            name: "base bandwidth".into(),
            reason: format!("must be positive, got {base_bandwidth}"),
        });
    }
    for i in inputs {
        let bad = |reason: String| {
            Err(CalibrationError::InvalidInput {
                name: i.name.clone(),
                reason,
            })
        };
        if !(i.compute_time > 0.0 && i.compute_time.is_finite()) {
            return bad(format!("T_P must be positive, got {}", i.compute_time));
        }
        if !(i.gamma > 0.0 && i.gamma.is_finite()) {
            return bad(format!("Gamma must be positive and finite, got {}", i.gamma));
        }
        if !(i.sharing >= 1.0 && i.sharing.is_finite()) {
            return bad(format!("sharing must be at least 1, got {}", i.sharing));
        }
    }
    if inputs.len() < 3 {
        return Err(CalibrationError::TooFewInputs(inputs.len()));
    }
    let scaled = inputs.iter().filter(|i| i.bandwidth_model.is_scaled()).count();
    if scaled == 0 || scaled == inputs.len() {
        return Err(CalibrationError::SingleNetwork);
    }
    Ok(())
}

/// Numerical rank of the design matrix by Gram-Schmidt on its columns.
fn design_rank(inputs: &[CalibrationInput]) -> usize {
    let rows: Vec<[f64; 3]> = inputs.iter().map(|i| i.row()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in 0..3 {
        let mut v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * norm0.max(1.0) {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis.len()
}

fn degeneracy(inputs: &[CalibrationInput]) -> CalibrationError {
    let mut redundant = Vec::new();
    for (i, a) in inputs.iter().enumerate() {
        let twin = inputs
            .iter()
            .enumerate()
            .any(|(j, b)| j != i && b.row() == a.row());
        if twin {
            redundant.push(a.name.clone());
        }
    }
    CalibrationError::Degenerate {
        redundant,
        reason: "every input on the same network sees the same effective bandwidth, \
                 so W and alpha cannot be separated from T_L"
            .into(),
    }
}

fn solve3(m: [[f64; 3]; 3], y: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = y[r];
        }
        *o = det(mk) / d;
    }
    out
}

/// Least squares in `(W, T_L)` for a fixed `alpha`; returns `(W, T_L, ||r||^2)`.
fn fit_fixed_alpha(inputs: &[CalibrationInput], base: f64, alpha: f64) -> (f64, f64, f64) {
    let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
    let n = inputs.len() as f64;
    for i in inputs {
        let x = inverse_bandwidth(i, base, alpha);
        let y = i.target();
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
    }
    let det = n * sxx - sx * sx;
    let w = (n * sxy - sx * sy) / det;
    let tl = (sxx * sy - sx * sxy) / det;
    let rss = inputs
        .iter()
        .map(|i| {
            let r = w * inverse_bandwidth(i, base, alpha) + tl - i.target();
            r * r
        })
        .sum::<f64>();
    (w, tl, rss)
}

fn inverse_bandwidth(i: &CalibrationInput, base: f64, alpha: f64) -> f64 {
    let b = if i.bandwidth_model.is_scaled() { alpha * base } else { base };
    i.sharing / b
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    (lo + hi) / 2.0
}

/// Fits `(W, alpha, T_L)` to the inputs. `base_bandwidth_mbs` is `b_1`.
///
/// Three inputs are solved exactly; more inputs are fitted by least squares
/// with `alpha` searched on `[1, 100]`.
pub fn calibrate(inputs: &[CalibrationInput], base_bandwidth_mbs: f64) -> Result<GammaFit, CalibrationError> {
    validate(inputs, base_bandwidth_mbs)?;
    if design_rank(inputs) < 3 {
        return Err(degeneracy(inputs));
    }
    let b1 = base_bandwidth_mbs;
    let (w, alpha, tl, method) = if inputs.len() == 3 {
        let m = [inputs[0].row(), inputs[1].row(), inputs[2].row()];
        let [a, b, tl] = solve3(m, [inputs[0].target(), inputs[1].target(), inputs[2].target()]);
        if !(a > 0.0 && b > 0.0) {
            return Err(CalibrationError::NonPhysical(format!(
                "W / b_1 = {a} and W / (alpha b_1) = {b} must both be positive"
            )));
        }
        (a * b1, a / b, tl, "closed_form")
    } else {
        let (lo, hi) = ALPHA_RANGE;
        let objective = |alpha: f64| fit_fixed_alpha(inputs, b1, alpha).2;
        // coarse log scan, then refine around the best sample
        let samples = 400;
        let grid: Vec<f64> = (0..=samples)
            .map(|k| lo * (hi / lo).powf(k as f64 / samples as f64))
            .collect();
        let best = (0..grid.len())
            .min_by(|&i, &j| objective(grid[i]).total_cmp(&objective(grid[j])))
            .expect("non-empty grid");
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(samples)];
        let alpha = golden_section(objective, a, b, ALPHA_TOLERANCE);
        let (w, tl, _) = fit_fixed_alpha(inputs, b1, alpha);
        if !(w > 0.0) {
            return Err(CalibrationError::NonPhysical(format!("fitted W = {w} MB is not positive")));
        }
        (w, alpha, tl, "least_squares")
    };
    if tl < -1e-9 * inputs.iter().map(|i| i.target()).fold(0.0, f64::max) {
        return Err(CalibrationError::NonPhysical(format!("fitted T_L = {tl} s is negative")));
    }
    let residuals: Vec<(String, f64)> = inputs
        .iter()
        .map(|i| (i.name.clone(), w * inverse_bandwidth(i, b1, alpha) + tl - i.target()))
        .collect();
    let residual_norm = residuals.iter().map(|(_, r)| r * r).sum::<f64>().sqrt();
    Ok(GammaFit {
        volume_mb: w,
        volume_words: w * 1e6 / crate::sem::WORD_BYTES as f64,
        alpha,
        latency_time: tl,
        base_bandwidth_mbs: b1,
        scaled_bandwidth_mbs: alpha * b1,
        residuals,
        residual_norm,
        method: method.into(),
    })
}

/// Reads calibration inputs from CSV (header `name,T_P,gamma,bandwidth_model,sharing`)
/// or from a JSON array of the same records.
pub fn calibrate_table(text: &str) -> Result<Vec<CalibrationInput>, CalibrationError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| CalibrationError::Parse(e.to_string()));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<Result<Vec<CalibrationInput>, _>>()
        .map_err(|e| CalibrationError::Parse(e.to_string()))
}
