//! Adaptive logit calibration trained by re-weighted distribution alignment.
//!
//! A frozen head produces logits `z_o`. Calibration rewrites them as
//!
//! ```text
//! ẑ_j = (1 + σ(x)·α_j)·z_o_j + σ(x)·β_j,    σ(x) = logistic(v·x + b)
//! ```
//!
//! and the calibrated softmax is aligned with a reference label distribution
//! that puts weight `w_c ∝ (1/r_c)^ρ` on the true class. The alignment loss is
//! the weighted negative log-likelihood `-(1/B) Σ_i w_{y_i} log p(y_i | x_i)`;
//! the entropy of the reference distribution does not depend on any
//! learnable and is dropped.

use serde::{Deserialize, Serialize};

use crate::data::ClassFrequencies;
use crate::error::{Error, Result};
use crate::frozen::FrozenFeatures;
use crate::linalg::dot;

/// Which stage-2 components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationFlags {
    pub magnitude: bool,
    pub margin: bool,
    pub confidence: bool,
}

impl CalibrationFlags {
    pub const FULL: Self = Self {
        magnitude: true,
        margin: true,
        confidence: true,
    };
    pub const NONE: Self = Self {
        magnitude: false,
        margin: false,
        confidence: false,
    };
}

impl Default for CalibrationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

/// Numerically safe logistic function.
#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log softmax(z)` with max subtraction.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(z.len());
    softmax_into(z, &mut p);
    p
}

/// Writes `softmax(z)` into `p` and returns `log Σ exp(z)`.
pub(crate) fn softmax_into(z: &[f64], p: &mut Vec<f64>) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.clear();
    p.extend(z.iter().map(|v| (v - m).exp()));
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    m + s.ln()
}

/// Stage-2 learnables.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub conf_weights: Vec<f64>,
    pub conf_bias: f64,
    pub flags: CalibrationFlags,
}

impl CalibrationParams {
    /// Standard initialization: `α = 1`, `β = 0`, and a gate with `v = 0`,
    /// `b = 0` (σ = 0.5 everywhere).
    pub fn new(num_classes: usize, dim: usize, flags: CalibrationFlags) -> Self {
        Self {
            alpha: vec![1.0; num_classes],
            beta: vec![0.0; num_classes],
            conf_weights: vec![0.0; dim],
            conf_bias: 0.0,
            flags,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.conf_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                context: "calibration beta",
                expected: self.alpha.len(),
                got: self.beta.len(),
            });
        }
        let finite = self
            .alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.conf_weights)
            .chain(std::iter::once(&self.conf_bias))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("calibration parameters must be finite".into()));
        }
        Ok(())
    }

    /// Gate value σ(x); exactly 1 when the gate is disabled.
    pub fn confidence(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "confidence input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.confidence_unchecked(x))
    }

    #[inline]
    fn confidence_unchecked(&self, x: &[f64]) -> f64 {
        if self.flags.confidence {
            logistic(dot(&self.conf_weights, x) + self.conf_bias)
        } else {
            1.0
        }
    }

    pub fn calibrate(&self, z_o: &[f64], sigma: f64) -> Vec<f64> {
        let mut z = z_o.to_vec();
        self.calibrate_in_place(&mut z, sigma);
        z
    }

    /// Disabled components are skipped rather than multiplied by zero, so an
    /// all-off configuration returns the input logits untouched.
    pub fn calibrate_in_place(&self, z: &mut [f64], sigma: f64) {
        debug_assert_eq!(z.len(), self.num_classes());
        if self.flags.magnitude {
            for (zj, a) in z.iter_mut().zip(&self.alpha) {
                *zj *= 1.0 + sigma * a;
            }
        }
        if self.flags.margin {
            for (zj, b) in z.iter_mut().zip(&self.beta) {
                *zj += sigma * b;
            }
        }
    }

    /// Calibrated logits for an encoded feature and its original logits.
    pub fn apply(&self, x: &[f64], z_o: &[f64]) -> Result<Vec<f64>> {
        if z_o.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "calibration logits",
                expected: self.num_classes(),
                got: z_o.len(),
            });
        }
        let sigma = self.confidence(x)?;
        Ok(self.calibrate(z_o, sigma))
    }

    /// Flat layout `[α (K) | β (K) | v (d) | b]`, used by the optimizer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.num_classes() + self.dim() + 1);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.conf_weights);
        v.push(self.conf_bias);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (k, d) = (self.num_classes(), self.dim());
        assert_eq!(flat.len(), 2 * k + d + 1, "flat calibration vector length");
        self.alpha.copy_from_slice(&flat[..k]);
        self.beta.copy_from_slice(&flat[k..2 * k]);
        self.conf_weights.copy_from_slice(&flat[2 * k..2 * k + d]);
        self.conf_bias = flat[2 * k + d];
    }
}

/// Normalized class weights of the reference distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ReweightVector {
    pub weights: Vec<f64>,
    pub rho: f64,
}

impl ReweightVector {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0 / num_classes as f64; num_classes],
            rho: 0.0,
        }
    }
}

/// `w_c = (1/r_c)^ρ / Σ_k (1/r_k)^ρ`.
///
/// Evaluated as `(r_min/r_c)^ρ` before normalizing, which keeps every term in
/// `(0, 1]` and makes `ρ = 0` give exactly `1/K`.
pub fn grw_weights(r: &ClassFrequencies, rho: f64) -> Result<ReweightVector> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho must be finite and >= 0, got {rho}")));
    }
    let r = r.values();
    if let Some(c) = r.iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::ZeroFrequency(c));
    }
    let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = r.iter().map(|&rc| (r_min / rc).powf(rho)).collect();
    let total: f64 = raw.iter().sum();
    Ok(ReweightVector {
        weights: raw.into_iter().map(|v| v / total).collect(),
        rho,
    })
}

/// Gradients of the alignment loss, same shapes as [`CalibrationParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationGrads {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub conf_weights: Vec<f64>,
    pub conf_bias: f64,
}

impl CalibrationGrads {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            alpha: vec![0.0; k],
            beta: vec![0.0; k],
            conf_weights: vec![0.0; d],
            conf_bias: 0.0,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.alpha.len() + self.conf_weights.len() + 1);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.conf_weights);
        v.push(self.conf_bias);
        v
    }
}

fn check_batch(
    frozen: &FrozenFeatures,
    indices: &[usize],
    params: &CalibrationParams,
    w: &ReweightVector,
) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let k = frozen.num_classes;
    for (ctx, got) in [
        ("calibration classes", params.num_classes()),
        ("reweight classes", w.weights.len()),
    ] {
        if got != k {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: k,
                got,
            });
        }
    }
    if params.dim() != frozen.dim() {
        return Err(Error::DimensionMismatch {
            context: "confidence weights",
            expected: frozen.dim(),
            got: params.dim(),
        });
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= frozen.len()) {
        return Err(Error::InvalidArgument(format!("batch index {i} out of range")));
    }
    Ok(())
}

/// Alignment loss over the samples `indices` of `frozen`.
pub fn disalign_loss(
    frozen: &FrozenFeatures,
    indices: &[usize],
    params: &CalibrationParams,
    w: &ReweightVector,
) -> Result<f64> {
    check_batch(frozen, indices, params, w)?;
    let mut z = vec![0.0; frozen.num_classes];
    let mut total = 0.0;
    for &i in indices {
        let y = frozen.labels[i];
        let sigma = params.confidence_unchecked(frozen.features.row(i));
        z.copy_from_slice(frozen.logits.row(i));
        params.calibrate_in_place(&mut z, sigma);
        total -= w.weights[y] * log_softmax(&z)[y];
    }
    Ok(total / indices.len() as f64)
}

/// Alignment loss and its closed-form gradient with respect to every enabled
/// stage-2 parameter. Disabled parameters get exactly zero gradient.
pub fn disalign_gradients(
    frozen: &FrozenFeatures,
    indices: &[usize],
    params: &CalibrationParams,
    w: &ReweightVector,
) -> Result<(f64, CalibrationGrads)> {
    check_batch(frozen, indices, params, w)?;
    let (k, d) = (frozen.num_classes, frozen.dim());
    let flags = params.flags;
    let inv_b = 1.0 / indices.len() as f64;
    let mut grads = CalibrationGrads::zeros(k, d);
    let mut z = vec![0.0; k];
    let mut p = Vec::with_capacity(k);
    let mut loss = 0.0;

    for &i in indices {
        let x = frozen.features.row(i);
        let z_o = frozen.logits.row(i);
        let y = frozen.labels[i];
        let wy = w.weights[y];
        let sigma = params.confidence_unchecked(x);

        z.copy_from_slice(z_o);
        params.calibrate_in_place(&mut z, sigma);
        let lse = softmax_into(&z, &mut p);
        loss += wy * (lse - z[y]);

        // dL/dσ accumulates Σ_j g_j (α'_j z_o_j + β'_j)
        let mut d_sigma = 0.0;
        for j in 0..k {
            let g = wy * inv_b * (p[j] - if j == y { 1.0 } else { 0.0 });
            if flags.magnitude {
                grads.alpha[j] += g * sigma * z_o[j];
                d_sigma += g * params.alpha[j] * z_o[j];
            }
            if flags.margin {
                grads.beta[j] += g * sigma;
                d_sigma += g * params.beta[j];
            }
        }
        if flags.confidence {
            let gate = d_sigma * sigma * (1.0 - sigma);
            for (gv, xv) in grads.conf_weights.iter_mut().zip(x) {
                *gv += gate * xv;
            }
            grads.conf_bias += gate;
        }
    }
    Ok((loss * inv_b, grads))
}

/// Re-weight coefficients for several ρ values against classes ranked by
/// descending frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightCurve {
    /// Class index at each rank.
    pub classes: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub columns: Vec<ReweightVector>,
}

pub fn export_weight_curve(r: &ClassFrequencies, rhos: &[f64]) -> Result<WeightCurve> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("rho list must not be empty".into()));
    }
    let mut classes: Vec<usize> = (0..r.len()).collect();
    classes.sort_by(|&a, &b| r.values()[b].total_cmp(&r.values()[a]).then(a.cmp(&b)));
    let columns = rhos
        .iter()
        .map(|&rho| {
            let w = grw_weights(r, rho)?;
            Ok(ReweightVector {
                weights: classes.iter().map(|&c| w.weights[c]).collect(),
                rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightCurve {
        frequencies: classes.iter().map(|&c| r.values()[c]).collect(),
        classes,
        columns,
    })
}

impl WeightCurve {
    /// Header `rank,class,frequency,w_rho=<ρ>...`, one row per class rank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,class,frequency");
        for col in &self.columns {
            out.push_str(&format!(",w_rho={}", col.rho));
        }
        out.push('\n');
        for (rank, (&c, &f)) in self.classes.iter().zip(&self.frequencies).enumerate() {
            out.push_str(&format!("{rank},{c},{f}"));
            for col in &self.columns {
                out.push_str(&format!(",{}", col.weights[rank]));
            }
            out.push('\n');
        }
        out
    }
}
