//! Feature encoder and classifier heads.
//!
//! The encoder is a single rectified hidden layer (or the identity when
//! disabled). Heads score an encoded feature against one weight row per
//! class, either by plain dot product or by scaled cosine similarity.

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LongTailDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::{stream_rng, streams};

pub const DEFAULT_COSINE_SCALE: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    hidden_weights: Matrix,
    hidden_bias: Vec<f64>,
    enabled: bool,
}

impl EncoderParams {
    /// Pass-through encoder.
    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_weights: Matrix::zeros(0, input_dim),
            hidden_bias: Vec::new(),
            enabled: false,
        }
    }

    pub fn new(hidden_weights: Matrix, hidden_bias: Vec<f64>) -> Result<Self> {
        if hidden_weights.rows() == 0 {
            return Err(Error::InvalidArgument("encoder needs at least one hidden unit".into()));
        }
        if hidden_bias.len() != hidden_weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "encoder bias",
                expected: hidden_weights.rows(),
                got: hidden_bias.len(),
            });
        }
        if !hidden_weights.is_finite() || hidden_bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("encoder parameters must be finite".into()));
        }
        Ok(Self {
            input_dim: hidden_weights.cols(),
            hidden_weights,
            hidden_bias,
            enabled: true,
        })
    }

    /// He-normal weights, zero bias.
    pub fn random(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::ENCODER_INIT);
        let std = (2.0 / input_dim as f64).sqrt();
        let w: Vec<f64> = (0..hidden * input_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                std * g
            })
            .collect();
        Self::new(Matrix::from_vec(hidden, input_dim, w)?, vec![0.0; hidden])
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        if self.enabled {
            self.hidden_weights.rows()
        } else {
            self.input_dim
        }
    }

    pub fn hidden_weights(&self) -> &Matrix {
        &self.hidden_weights
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        (&mut self.hidden_weights, &mut self.hidden_bias)
    }

    pub fn encode(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_input(raw)?;
        if !self.enabled {
            return Ok(raw.to_vec());
        }
        let mut pre = vec![0.0; self.hidden_weights.rows()];
        let mut out = vec![0.0; pre.len()];
        self.forward_into(raw, &mut pre, &mut out);
        Ok(out)
    }

    pub(crate) fn check_input(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.input_dim,
                got: raw.len(),
            });
        }
        Ok(())
    }

    /// Enabled-encoder forward pass keeping the pre-activations for backprop.
    pub(crate) fn forward_into(&self, raw: &[f64], pre: &mut [f64], out: &mut [f64]) {
        self.hidden_weights.matvec_into(raw, pre);
        for ((p, b), o) in pre.iter_mut().zip(&self.hidden_bias).zip(out.iter_mut()) {
            *p += b;
            *o = p.max(0.0);
        }
    }

    /// Encode every row of a dataset.
    pub fn encode_dataset(&self, dataset: &LongTailDataset) -> Result<Matrix> {
        let d = self.output_dim();
        let mut out = Matrix::zeros(dataset.len(), d);
        for i in 0..dataset.len() {
            let x = self.encode(&dataset.row_f64(i))?;
            out.row_mut(i).copy_from_slice(&x);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Cosine,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown head kind `{other}`"))),
        }
    }
}

/// Classifier head: one weight row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    weights: Matrix,
    kind: HeadKind,
    scale: f64,
}

impl HeadParams {
    pub fn new(weights: Matrix, kind: HeadKind, scale: f64) -> Result<Self> {
        if !weights.is_finite() {
            return Err(Error::InvalidArgument("head weights must be finite".into()));
        }
        if kind == HeadKind::Cosine {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "cosine scale must be positive, got {scale}"
                )));
            }
            if (0..weights.rows()).any(|j| norm(weights.row(j)) == 0.0) {
                return Err(Error::ZeroNorm("cosine head weight row"));
            }
        }
        Ok(Self {
            weights,
            kind,
            scale,
        })
    }

    /// Uniform weights in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn random(num_classes: usize, dim: usize, kind: HeadKind, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::HEAD_INIT);
        let bound = 1.0 / (dim as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let w = (0..num_classes * dim).map(|_| uniform.sample(&mut rng)).collect();
        Self::new(Matrix::from_vec(num_classes, dim, w)?, kind, scale)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Class logits for an encoded feature. Cosine logits lie in `[-s, s]`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.num_classes()];
        self.score_into(x, &mut z)?;
        Ok(z)
    }

    pub fn score_into(&self, x: &[f64], z: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "head input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self.kind {
            HeadKind::Linear => self.weights.matvec_into(x, z),
            HeadKind::Cosine => {
                let xn = norm(x);
                if xn == 0.0 {
                    return Err(Error::ZeroNorm("cosine head input feature"));
                }
                for (j, zj) in z.iter_mut().enumerate() {
                    let w = self.weights.row(j);
                    let wn = norm(w);
                    if wn == 0.0 {
                        return Err(Error::ZeroNorm("cosine head weight row"));
                    }
                    *zj = self.scale * dot(w, x) / (wn * xn);
                }
            }
        }
        Ok(())
    }

    /// Rescale every row to `w_j / ||w_j||^tau`.
    pub fn tau_normalize(&self, tau: f64) -> Result<Self> {
        if tau == 0.0 {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        for j in 0..out.num_classes() {
            let row = out.weights.row_mut(j);
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroNorm("tau-normalized weight row"));
            }
            let f = n.powf(tau);
            row.iter_mut().for_each(|w| *w /= f);
        }
        Ok(out)
    }
}

/// Architecture of a freshly initialized model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Hidden width; zero disables the encoder.
    pub hidden: usize,
    pub head: HeadKind,
    pub scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: 64,
            head: HeadKind::Linear,
            scale: DEFAULT_COSINE_SCALE,
        }
    }
}

impl ModelSpec {
    pub fn init_encoder(&self, input_dim: usize, seed: u64) -> Result<EncoderParams> {
        if self.hidden == 0 {
            Ok(EncoderParams::identity(input_dim))
        } else {
            EncoderParams::random(input_dim, self.hidden, seed)
        }
    }

    pub fn init_head(&self, num_classes: usize, dim: usize, seed: u64) -> Result<HeadParams> {
        HeadParams::random(num_classes, dim, self.head, self.scale, seed)
    }
}

/// Nearest-class-mean head: row `j` is the mean encoded feature of class `j`,
/// scored by cosine similarity.
pub fn ncm_fit(dataset: &LongTailDataset, encoder: &EncoderParams, scale: f64) -> Result<HeadParams> {
    let d = encoder.output_dim();
    let k = dataset.num_classes();
    let mut sums = Matrix::zeros(k, d);
    for i in 0..dataset.len() {
        let x = encoder.encode(&dataset.row_f64(i))?;
        sums.row_mut(dataset.labels()[i])
            .iter_mut()
            .zip(&x)
            .for_each(|(s, v)| *s += v);
    }
    for (j, &n) in dataset.class_counts().iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyClass(j));
        }
        sums.row_mut(j).iter_mut().for_each(|s| *s /= n as f64);
    }
    HeadParams::new(sums, HeadKind::Cosine, scale)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_encoder_is_identity() {
        let e = EncoderParams::identity(3);
        assert_eq!(e.encode(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_encoder_gives_zero() {
        let e = EncoderParams::new(Matrix::zeros(4, 2), vec![0.0; 4]).unwrap();
        assert_eq!(e.encode(&[3.0, -1.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn rectifier_hand_value() {
        let e = EncoderParams::new(Matrix::identity(2), vec![0.0; 2]).unwrap();
        assert_eq!(e.encode(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert!(matches!(e.encode(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn linear_identity_head() {
        let h = HeadParams::new(Matrix::identity(3), HeadKind::Linear, 1.0).unwrap();
        assert_eq!(h.score(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_self_similarity_and_orthogonality() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-2.0, 1.0]]).unwrap();
        let h = HeadParams::new(w, HeadKind::Cosine, 16.0).unwrap();
        let z = h.score(&[1.0, 2.0]).unwrap();
        assert!((z[0] - 16.0).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_norms() {
        let h = HeadParams::new(Matrix::identity(2), HeadKind::Cosine, 16.0).unwrap();
        assert!(matches!(h.score(&[0.0, 0.0]), Err(Error::ZeroNorm(_))));
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(HeadParams::new(w, HeadKind::Cosine, 16.0).is_err());
        assert!(HeadParams::new(Matrix::identity(2), HeadKind::Cosine, 0.0).is_err());
    }

    #[test]
    fn tau_normalize_hand_values() {
        let w = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.6, 0.8]]).unwrap();
        let h = HeadParams::new(w, HeadKind::Linear, 1.0).unwrap();
        assert_eq!(h.tau_normalize(0.0).unwrap(), h);
        let half = h.tau_normalize(0.5).unwrap();
        let s5 = 5f64.sqrt();
        assert!((half.weights().row(0)[0] - 3.0 / s5).abs() < 1e-12);
        assert!((half.weights().row(0)[1] - 4.0 / s5).abs() < 1e-12);
        let unit = h.tau_normalize(1.0).unwrap();
        for j in 0..2 {
            assert!((norm(unit.weights().row(j)) - 1.0).abs() < 1e-12);
        }
        let zero_row = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let h = HeadParams::new(zero_row, HeadKind::Linear, 1.0).unwrap();
        assert!(h.tau_normalize(1.0).is_err());
        assert!(h.tau_normalize(0.0).is_ok());
    }

    #[test]
    fn ncm_means() {
        let ds = LongTailDataset::new(
            vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0],
            vec![0, 0, 1, 1],
            2,
            2,
            0,
        )
        .unwrap();
        let h = ncm_fit(&ds, &EncoderParams::identity(2), 16.0).unwrap();
        assert_eq!(h.weights().row(0), &[0.5, 0.5]);
        assert_eq!(h.weights().row(1), &[2.0, 2.0]);
        assert_eq!(h.kind(), HeadKind::Cosine);
    }

    #[test]
    fn ncm_one_sample_per_class_recovers_training_labels() {
        let ds = LongTailDataset::new(
            vec![1.0, 0.1, -0.2, 1.0, -1.0, -0.3],
            vec![0, 1, 2],
            2,
            3,
            0,
        )
        .unwrap();
        let enc = EncoderParams::identity(2);
        let h = ncm_fit(&ds, &enc, 16.0).unwrap();
        for i in 0..3 {
            assert_eq!(h.weights().row(i), ds.row_f64(i).as_slice());
            assert_eq!(argmax(&h.score(&ds.row_f64(i)).unwrap()), i);
        }
    }

    #[test]
    fn ncm_empty_class_errors() {
        let ds = LongTailDataset::new(vec![1.0, 2.0], vec![0, 0], 1, 2, 0).unwrap();
        assert!(matches!(
            ncm_fit(&ds, &EncoderParams::identity(1), 16.0),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn argmax_ties_take_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
