//! Comparison methods operating on a frozen stage-1 representation.
//!
//! Hand-crafted post-hoc adjustments (logit adjustment, the de-confounding
//! margin, τ-normalization via [`HeadParams::tau_normalize`], nearest class
//! mean via [`crate::heads::ncm_fit`]) and two learned ones: classifier
//! re-training (cRT) and learnable weight scaling (LWS).

use serde::{Deserialize, Serialize};

use crate::calibration::softmax_into;
use crate::data::{ClassFrequencies, LongTailDataset, Sampler, SamplerKind};
use crate::error::{Error, Result};
use crate::frozen::FrozenFeatures;
use crate::heads::{EncoderParams, HeadKind, HeadParams};
use crate::linalg::{dot, norm};
use crate::rng::derive_seed;
use crate::trainer::{run_sgd, train_head, SgdConfig, TrainTrace};

/// Smallest value an LWS scale may take after a projected step.
pub const LWS_MIN_SCALE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitAdjustConfig {
    pub lambda: f64,
}

/// `ẑ_j = z_j − λ·log(r_j)`.
pub fn logit_adjust(z: &[f64], r: &ClassFrequencies, cfg: &LogitAdjustConfig) -> Result<Vec<f64>> {
    if z.len() != r.len() {
        return Err(Error::DimensionMismatch {
            context: "logit adjustment",
            expected: r.len(),
            got: z.len(),
        });
    }
    if let Some(c) = r.values().iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::ZeroFrequency(c));
    }
    if cfg.lambda == 0.0 {
        return Ok(z.to_vec());
    }
    Ok(z
        .iter()
        .zip(r.values())
        .map(|(zj, rj)| zj - cfg.lambda * rj.ln())
        .collect())
}

/// De-confounding margin settings; `mean_feature` is the training-set mean of
/// encoded features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdeConfig {
    pub lambda: f64,
    pub mean_feature: Vec<f64>,
}

impl TdeConfig {
    pub fn from_dataset(dataset: &LongTailDataset, encoder: &EncoderParams, lambda: f64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("mean feature of an empty dataset".into()));
        }
        let x = encoder.encode_dataset(dataset)?;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= x.rows() as f64);
        if norm(&mean) == 0.0 {
            return Err(Error::ZeroNorm("mean training feature"));
        }
        Ok(Self {
            lambda,
            mean_feature: mean,
        })
    }
}

/// `ẑ_j = z_j − λ·d(x, e)·(w_j·e)` with cosine distance
/// `d(x, e) = 1 − x·e / (||x||·||e||)`. Uses the literal weight-mean product,
/// without normalizing `w_j`. With `λ = 0` the logits pass through unchanged,
/// even for a zero feature.
pub fn tde_adjust(z: &[f64], x: &[f64], head: &HeadParams, cfg: &TdeConfig) -> Result<Vec<f64>> {
    let e = &cfg.mean_feature;
    if x.len() != e.len() || head.dim() != e.len() {
        return Err(Error::DimensionMismatch {
            context: "de-confound mean feature",
            expected: head.dim(),
            got: e.len(),
        });
    }
    if z.len() != head.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "de-confound logits",
            expected: head.num_classes(),
            got: z.len(),
        });
    }
    if cfg.lambda == 0.0 {
        return Ok(z.to_vec());
    }
    let (xn, en) = (norm(x), norm(e));
    if xn == 0.0 {
        return Err(Error::ZeroNorm("de-confound input feature"));
    }
    if en == 0.0 {
        return Err(Error::ZeroNorm("de-confound mean feature"));
    }
    let dist = 1.0 - dot(x, e) / (xn * en);
    Ok(z
        .iter()
        .enumerate()
        .map(|(j, zj)| zj - cfg.lambda * dist * dot(head.weights().row(j), e))
        .collect())
}

/// Classifier re-training: a fresh head trained on frozen features with
/// class-balanced sampling and plain cross-entropy.
pub fn crt_train(
    dataset: &LongTailDataset,
    encoder: &EncoderParams,
    kind: HeadKind,
    scale: f64,
    cfg: &SgdConfig,
) -> Result<(HeadParams, TrainTrace)> {
    let init = HeadParams::random(
        dataset.num_classes(),
        encoder.output_dim(),
        kind,
        scale,
        derive_seed(cfg.seed, 0),
    )?;
    let cfg = SgdConfig {
        sampler: SamplerKind::ClassBalanced,
        ..cfg.clone()
    };
    train_head(dataset, encoder, &init, &cfg)
}

/// `ẑ_j = f_j · z_j`.
pub fn lws_apply(z: &[f64], scales: &[f64]) -> Vec<f64> {
    z.iter().zip(scales).map(|(zj, f)| f * zj).collect()
}

/// Mean cross-entropy of the scaled logits over `indices` and its gradient
/// with respect to the scales.
pub fn lws_gradients(frozen: &FrozenFeatures, indices: &[usize], scales: &[f64]) -> Result<(f64, Vec<f64>)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let k = frozen.num_classes;
    if scales.len() != k {
        return Err(Error::DimensionMismatch {
            context: "LWS scales",
            expected: k,
            got: scales.len(),
        });
    }
    let inv_b = 1.0 / indices.len() as f64;
    let mut grad = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut p = Vec::with_capacity(k);
    let mut loss = 0.0;
    for &i in indices {
        let z_o = frozen.logits.row(i);
        let y = frozen.labels[i];
        for j in 0..k {
            z[j] = scales[j] * z_o[j];
        }
        let lse = softmax_into(&z, &mut p);
        loss += lse - z[y];
        for j in 0..k {
            let g = p[j] - if j == y { 1.0 } else { 0.0 };
            grad[j] += inv_b * g * z_o[j];
        }
    }
    Ok((loss * inv_b, grad))
}

/// Learnable weight scaling: per-class logit scales (initialized to 1) learned
/// with class-balanced sampling on a frozen encoder and head. Scales are
/// projected onto `[LWS_MIN_SCALE, ∞)` after every step.
pub fn lws_train(
    dataset: &LongTailDataset,
    encoder: &EncoderParams,
    head: &HeadParams,
    cfg: &SgdConfig,
) -> Result<(Vec<f64>, TrainTrace)> {
    let frozen = FrozenFeatures::compute(dataset, encoder, head)?;
    lws_train_frozen(&frozen, cfg)
}

pub fn lws_train_frozen(frozen: &FrozenFeatures, cfg: &SgdConfig) -> Result<(Vec<f64>, TrainTrace)> {
    let k = frozen.num_classes;
    let sampler = Sampler::from_labels(SamplerKind::ClassBalanced, &frozen.labels, k)?;
    let mut scales = vec![1.0; k];
    let mut velocity = vec![0.0; k];
    let trace = run_sgd(cfg, &sampler, frozen.len(), |idx, lr| {
        let (loss, g) = lws_gradients(frozen, idx, &scales)?;
        for j in 0..k {
            velocity[j] = cfg.momentum * velocity[j] + g[j];
            scales[j] = (scales[j] - lr * velocity[j]).max(LWS_MIN_SCALE);
        }
        Ok(loss)
    })?;
    Ok((scales, trace))
}
