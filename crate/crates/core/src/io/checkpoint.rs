//! JSON checkpoints for encoder, head and calibration parameters.
//!
//! Floats are written in shortest round-trip decimal form and parsed back
//! exactly, so a checkpoint reproduces its parameters bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationFlags, CalibrationParams};
use crate::error::{Error, Result};
use crate::heads::{EncoderParams, HeadKind, HeadParams};
use crate::linalg::Matrix;

pub const FORMAT: &str = "disalign-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderRecord {
    pub enabled: bool,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `hidden_dim × input_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadRecord {
    pub kind: HeadKind,
    pub num_classes: usize,
    pub dim: usize,
    pub scale: f64,
    /// `num_classes × dim`, row-major.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub conf_weights: Vec<f64>,
    pub conf_bias: f64,
    pub flags: CalibrationFlags,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub encoder: EncoderRecord,
    pub head: HeadRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationRecord>,
    /// Training-set class counts, used for group reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_counts: Option<Vec<usize>>,
}

impl From<&EncoderParams> for EncoderRecord {
    fn from(e: &EncoderParams) -> Self {
        Self {
            enabled: e.is_enabled(),
            input_dim: e.input_dim(),
            hidden_dim: e.hidden_weights().rows(),
            weights: e.hidden_weights().as_slice().to_vec(),
            bias: e.hidden_bias().to_vec(),
        }
    }
}

impl EncoderRecord {
    pub fn to_params(&self) -> Result<EncoderParams> {
        if !self.enabled {
            return Ok(EncoderParams::identity(self.input_dim));
        }
        let w = Matrix::from_vec(self.hidden_dim, self.input_dim, self.weights.clone())?;
        EncoderParams::new(w, self.bias.clone())
    }
}

impl From<&HeadParams> for HeadRecord {
    fn from(h: &HeadParams) -> Self {
        Self {
            kind: h.kind(),
            num_classes: h.num_classes(),
            dim: h.dim(),
            scale: h.scale(),
            weights: h.weights().as_slice().to_vec(),
        }
    }
}

impl HeadRecord {
    pub fn to_params(&self) -> Result<HeadParams> {
        let w = Matrix::from_vec(self.num_classes, self.dim, self.weights.clone())?;
        HeadParams::new(w, self.kind, self.scale)
    }
}

impl CalibrationRecord {
    pub fn new(params: &CalibrationParams, rho: f64) -> Self {
        Self {
            alpha: params.alpha.clone(),
            beta: params.beta.clone(),
            conf_weights: params.conf_weights.clone(),
            conf_bias: params.conf_bias,
            flags: params.flags,
            rho,
        }
    }

    pub fn to_params(&self) -> Result<CalibrationParams> {
        let p = CalibrationParams {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            conf_weights: self.conf_weights.clone(),
            conf_bias: self.conf_bias,
            flags: self.flags,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Checkpoint {
    pub fn new(encoder: &EncoderParams, head: &HeadParams) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            encoder: encoder.into(),
            head: head.into(),
            calibration: None,
            train_counts: None,
        }
    }

    pub fn with_calibration(mut self, params: &CalibrationParams, rho: f64) -> Self {
        self.calibration = Some(CalibrationRecord::new(params, rho));
        self
    }

    pub fn with_train_counts(mut self, counts: &[usize]) -> Self {
        self.train_counts = Some(counts.to_vec());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s)?;
        if ck.format != FORMAT || ck.version != FORMAT_VERSION {
            return Err(Error::Malformed {
                location: "checkpoint header".into(),
                message: format!(
                    "expected {FORMAT} v{FORMAT_VERSION}, found {} v{}",
                    ck.format, ck.version
                ),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn encoder(&self) -> Result<EncoderParams> {
        self.encoder.to_params()
    }

    pub fn head(&self) -> Result<HeadParams> {
        let head = self.head.to_params()?;
        let enc_out = if self.encoder.enabled {
            self.encoder.hidden_dim
        } else {
            self.encoder.input_dim
        };
        if head.dim() != enc_out {
            return Err(Error::DimensionMismatch {
                context: "checkpoint head input vs encoder output",
                expected: enc_out,
                got: head.dim(),
            });
        }
        Ok(head)
    }
}
