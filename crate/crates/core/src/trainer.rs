//! Mini-batch SGD with momentum and cosine learning-rate decay.
//!
//! Drives stage-1 joint training (encoder + head), head-only retraining on
//! frozen features, and stage-2 calibration training. Batches are drawn with
//! replacement by a [`Sampler`]; one epoch is `N` draws regardless of the
//! sampler, so every strategy sees the same number of steps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calibration::{
    disalign_gradients, grw_weights, softmax_into, CalibrationFlags, CalibrationParams,
};
use crate::data::{ClassFrequencies, LongTailDataset, Sampler, SamplerKind};
use crate::error::{Error, Result};
use crate::frozen::FrozenFeatures;
use crate::heads::{EncoderParams, HeadKind, HeadParams, ModelSpec};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::rng::{derive_seed, stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    CosineToZero,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub sampler: SamplerKind,
    pub weight_decay: f64,
    /// Use every sample once per step (one step per epoch) instead of
    /// sampled mini-batches.
    pub full_batch: bool,
    pub seed: u64,
}

impl SgdConfig {
    /// Stage-1 joint training defaults.
    pub fn stage1() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            batch_size: 64,
            epochs: 100,
            schedule: Schedule::CosineToZero,
            sampler: SamplerKind::InstanceBalanced,
            weight_decay: 0.0,
            full_batch: false,
            seed: 0,
        }
    }

    /// Stage-2 calibration defaults: the learning rate restarts and runs for
    /// ten epochs.
    pub fn stage2() -> Self {
        Self {
            epochs: 10,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be finite and >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr0,
            Schedule::CosineToZero => {
                let t = step as f64 / total_steps.max(1) as f64;
                self.lr0 * 0.5 * (1.0 + (PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub loss: f64,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.lr));
        }
        out
    }
}

/// Heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
struct Momentum {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    fn new(momentum: f64, group_sizes: &[usize]) -> Self {
        Self {
            momentum,
            velocity: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, group: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let v = &mut self.velocity[group];
        debug_assert_eq!(v.len(), params.len());
        for ((p, g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
            *vi = self.momentum * *vi + g;
            *p -= lr * *vi;
        }
    }
}

/// Runs the batching and schedule; `step` computes the batch loss and applies
/// the update at the given learning rate.
pub(crate) fn run_sgd<F>(cfg: &SgdConfig, sampler: &Sampler, n: usize, mut step: F) -> Result<TrainTrace>
where
    F: FnMut(&[usize], f64) -> Result<f64>,
{
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, streams::SAMPLER);
    let steps_per_epoch = if cfg.full_batch {
        1
    } else {
        n.div_ceil(cfg.batch_size)
    };
    let total = cfg.epochs * steps_per_epoch;
    let all: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut first_lr = 0.0;
        let mut remaining = n;
        for s in 0..steps_per_epoch {
            let global = epoch * steps_per_epoch + s;
            let lr = cfg.lr_at(global, total);
            if s == 0 {
                first_lr = lr;
            }
            let indices: &[usize] = if cfg.full_batch {
                &all
            } else {
                let size = cfg.batch_size.min(remaining);
                remaining -= size;
                batch.clear();
                batch.extend((0..size).map(|_| sampler.next_index(&mut rng)));
                &batch
            };
            let loss = step(indices, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: s });
            }
            loss_sum += loss * indices.len() as f64;
        }
        trace.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            lr: first_lr,
        });
    }
    Ok(trace)
}

/// Cross-entropy of one sample through `head`, accumulating `scale`-weighted
/// gradients into `grad_w` and, when given, `grad_x`.
#[allow(clippy::too_many_arguments)]
fn head_backward(
    head: &HeadParams,
    x: &[f64],
    y: usize,
    scale: f64,
    grad_w: &mut Matrix,
    grad_x: Option<&mut [f64]>,
    z: &mut [f64],
    p: &mut Vec<f64>,
) -> Result<f64> {
    head.score_into(x, z)?;
    let loss = softmax_into(z, p) - z[y];
    let w = head.weights();
    match head.kind() {
        HeadKind::Linear => {
            let mut gx = grad_x;
            for (j, &pj) in p.iter().enumerate() {
                let g = scale * (pj - if j == y { 1.0 } else { 0.0 });
                axpy(g, x, grad_w.row_mut(j));
                if let Some(gx) = gx.as_deref_mut() {
                    axpy(g, w.row(j), gx);
                }
            }
        }
        HeadKind::Cosine => {
            let s = head.scale();
            let xn = norm(x);
            let mut gx = grad_x;
            for (j, &pj) in p.iter().enumerate() {
                let g = scale * (pj - if j == y { 1.0 } else { 0.0 });
                let wj = w.row(j);
                let wn = norm(wj);
                let c = dot(wj, x) / (wn * xn);
                // dz/dw = s/|w| (x/|x| − c·w/|w|),  dz/dx = s/|x| (w/|w| − c·x/|x|)
                let gw = grad_w.row_mut(j);
                for ((gwi, &xi), &wi) in gw.iter_mut().zip(x).zip(wj) {
                    *gwi += g * s / wn * (xi / xn - c * wi / wn);
                }
                if let Some(gx) = gx.as_deref_mut() {
                    for ((gxi, &xi), &wi) in gx.iter_mut().zip(x).zip(wj) {
                        *gxi += g * s / xn * (wi / wn - c * xi / xn);
                    }
                }
            }
        }
    }
    Ok(loss)
}

/// Gradients of the mean cross-entropy with respect to encoder and head.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGrads {
    pub encoder_weights: Matrix,
    pub encoder_bias: Vec<f64>,
    pub head_weights: Matrix,
}

fn joint_gradients_raw(
    raw: &Matrix,
    labels: &[usize],
    indices: &[usize],
    encoder: &EncoderParams,
    head: &HeadParams,
) -> Result<(f64, JointGrads)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let h = encoder.output_dim();
    let mut grads = JointGrads {
        encoder_weights: Matrix::zeros(encoder.hidden_weights().rows(), encoder.input_dim()),
        encoder_bias: vec![0.0; encoder.hidden_bias().len()],
        head_weights: Matrix::zeros(head.num_classes(), head.dim()),
    };
    let inv_b = 1.0 / indices.len() as f64;
    let mut pre = vec![0.0; h];
    let mut x = vec![0.0; h];
    let mut gx = vec![0.0; h];
    let mut z = vec![0.0; head.num_classes()];
    let mut p = Vec::with_capacity(head.num_classes());
    let mut loss = 0.0;

    for &i in indices {
        let r = raw.row(i);
        if !encoder.is_enabled() {
            loss += head_backward(head, r, labels[i], inv_b, &mut grads.head_weights, None, &mut z, &mut p)?;
            continue;
        }
        encoder.forward_into(r, &mut pre, &mut x);
        gx.iter_mut().for_each(|v| *v = 0.0);
        loss += head_backward(
            head,
            &x,
            labels[i],
            inv_b,
            &mut grads.head_weights,
            Some(&mut gx),
            &mut z,
            &mut p,
        )?;
        for (u, (&a, &g)) in pre.iter().zip(&gx).enumerate() {
            if a > 0.0 && g != 0.0 {
                axpy(g, r, grads.encoder_weights.row_mut(u));
                grads.encoder_bias[u] += g;
            }
        }
    }
    Ok((loss * inv_b, grads))
}

fn raw_matrix(dataset: &LongTailDataset) -> Matrix {
    let data = dataset.features().iter().map(|&v| f64::from(v)).collect();
    Matrix::from_vec(dataset.len(), dataset.dim(), data).expect("dataset shape")
}

/// Mean cross-entropy over `indices` and its gradient with respect to the
/// encoder's hidden layer and the head weights.
pub fn joint_gradients(
    dataset: &LongTailDataset,
    indices: &[usize],
    encoder: &EncoderParams,
    head: &HeadParams,
) -> Result<(f64, JointGrads)> {
    check_model(dataset, encoder, head)?;
    joint_gradients_raw(&raw_matrix(dataset), dataset.labels(), indices, encoder, head)
}

fn check_model(dataset: &LongTailDataset, encoder: &EncoderParams, head: &HeadParams) -> Result<()> {
    let checks = [
        ("encoder input", encoder.input_dim(), dataset.dim()),
        ("head input", head.dim(), encoder.output_dim()),
        ("head classes", head.num_classes(), dataset.num_classes()),
    ];
    for (context, expected, got) in checks {
        if expected != got {
            return Err(Error::DimensionMismatch {
                context,
                expected,
                got,
            });
        }
    }
    Ok(())
}

/// Stage 1: train encoder and head jointly with unweighted cross-entropy.
pub fn train_joint(
    dataset: &LongTailDataset,
    encoder_init: &EncoderParams,
    head_init: &HeadParams,
    cfg: &SgdConfig,
) -> Result<(EncoderParams, HeadParams, TrainTrace)> {
    check_model(dataset, encoder_init, head_init)?;
    let raw = raw_matrix(dataset);
    let labels = dataset.labels();
    let sampler = Sampler::new(cfg.sampler, dataset)?;
    let mut encoder = encoder_init.clone();
    let mut head = head_init.clone();
    let mut opt = Momentum::new(
        cfg.momentum,
        &[
            encoder.hidden_weights().as_slice().len(),
            encoder.hidden_bias().len(),
            head.weights().as_slice().len(),
        ],
    );
    let wd = cfg.weight_decay;

    let trace = run_sgd(cfg, &sampler, dataset.len(), |idx, lr| {
        let (loss, mut g) = joint_gradients_raw(&raw, labels, idx, &encoder, &head)?;
        if wd > 0.0 {
            axpy(wd, encoder.hidden_weights().as_slice(), g.encoder_weights.as_mut_slice());
            axpy(wd, head.weights().as_slice(), g.head_weights.as_mut_slice());
        }
        let (ew, eb) = encoder.parts_mut();
        opt.step(0, ew.as_mut_slice(), g.encoder_weights.as_slice(), lr);
        opt.step(1, eb, &g.encoder_bias, lr);
        opt.step(2, head.weights_mut().as_mut_slice(), g.head_weights.as_slice(), lr);
        Ok(loss)
    })?;
    let head = HeadParams::new(head.weights().clone(), head.kind(), head.scale())?;
    Ok((encoder, head, trace))
}

/// Train only the head on features from a frozen encoder.
pub fn train_head(
    dataset: &LongTailDataset,
    encoder: &EncoderParams,
    head_init: &HeadParams,
    cfg: &SgdConfig,
) -> Result<(HeadParams, TrainTrace)> {
    check_model(dataset, encoder, head_init)?;
    let features = encoder.encode_dataset(dataset)?;
    let labels = dataset.labels();
    let sampler = Sampler::new(cfg.sampler, dataset)?;
    let identity = EncoderParams::identity(features.cols());
    let mut head = head_init.clone();
    let mut opt = Momentum::new(cfg.momentum, &[head.weights().as_slice().len()]);
    let wd = cfg.weight_decay;

    let trace = run_sgd(cfg, &sampler, dataset.len(), |idx, lr| {
        let (loss, mut g) = joint_gradients_raw(&features, labels, idx, &identity, &head)?;
        if wd > 0.0 {
            axpy(wd, head.weights().as_slice(), g.head_weights.as_mut_slice());
        }
        opt.step(0, head.weights_mut().as_mut_slice(), g.head_weights.as_slice(), lr);
        Ok(loss)
    })?;
    let head = HeadParams::new(head.weights().clone(), head.kind(), head.scale())?;
    Ok((head, trace))
}

/// Stage 2 on precomputed frozen features.
pub fn train_disalign_frozen(
    frozen: &FrozenFeatures,
    train_counts: &[usize],
    rho: f64,
    flags: CalibrationFlags,
    cfg: &SgdConfig,
) -> Result<(CalibrationParams, TrainTrace)> {
    let r = ClassFrequencies::from_counts(train_counts)?;
    let w = grw_weights(&r, rho)?;
    let sampler = Sampler::from_labels(cfg.sampler, &frozen.labels, frozen.num_classes)?;
    let mut params = CalibrationParams::new(frozen.num_classes, frozen.dim(), flags);
    let mut flat = params.to_flat();
    let mut opt = Momentum::new(cfg.momentum, &[flat.len()]);

    let trace = run_sgd(cfg, &sampler, frozen.len(), |idx, lr| {
        let (loss, g) = disalign_gradients(frozen, idx, &params, &w)?;
        opt.step(0, &mut flat, &g.to_flat(), lr);
        params.set_flat(&flat);
        Ok(loss)
    })?;
    Ok((params, trace))
}

/// Stage 2: learn the calibration on top of a frozen encoder and head.
pub fn train_disalign(
    dataset: &LongTailDataset,
    encoder: &EncoderParams,
    head: &HeadParams,
    rho: f64,
    flags: CalibrationFlags,
    cfg: &SgdConfig,
) -> Result<(CalibrationParams, TrainTrace)> {
    check_model(dataset, encoder, head)?;
    let frozen = FrozenFeatures::compute(dataset, encoder, head)?;
    train_disalign_frozen(&frozen, dataset.class_counts(), rho, flags, cfg)
}

/// Classifier bound: a fresh head trained on a class-balanced dataset with
/// instance-balanced sampling over the frozen representation.
pub fn train_bound(
    balanced: &LongTailDataset,
    encoder: &EncoderParams,
    model: &ModelSpec,
    cfg: &SgdConfig,
) -> Result<HeadParams> {
    if balanced.balanced_count().is_none() {
        let counts = balanced.class_counts();
        return Err(Error::Imbalanced {
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
        });
    }
    let head_init = model.init_head(
        balanced.num_classes(),
        encoder.output_dim(),
        derive_seed(cfg.seed, 0),
    )?;
    let cfg = SgdConfig {
        sampler: SamplerKind::InstanceBalanced,
        ..cfg.clone()
    };
    Ok(train_head(balanced, encoder, &head_init, &cfg)?.0)
}
