//! A frozen encoder + head with an optional logit transform, evaluated through
//! one prediction path shared by every method.

use crate::baselines::{lws_apply, logit_adjust, tde_adjust, LogitAdjustConfig, TdeConfig};
use crate::calibration::CalibrationParams;
use crate::data::ClassFrequencies;
use crate::error::Result;
use crate::heads::{argmax, EncoderParams, HeadParams};

/// Maps a raw feature vector to a class index.
pub trait Predictor {
    fn predict(&self, raw: &[f64]) -> Result<usize>;

    fn describe(&self) -> String;
}

/// Post-hoc transform applied to the head's logits.
#[derive(Clone, Debug, PartialEq)]
pub enum Adjustment {
    None,
    Calibration(CalibrationParams),
    Lws(Vec<f64>),
    LogitAdjust {
        frequencies: ClassFrequencies,
        config: LogitAdjustConfig,
    },
    Tde(TdeConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub adjustment: Adjustment,
}

impl Model {
    pub fn new(name: impl Into<String>, encoder: EncoderParams, head: HeadParams) -> Self {
        Self {
            name: name.into(),
            encoder,
            head,
            adjustment: Adjustment::None,
        }
    }

    pub fn with_adjustment(mut self, adjustment: Adjustment) -> Self {
        self.adjustment = adjustment;
        self
    }

    pub fn logits(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let x = self.encoder.encode(raw)?;
        let z = self.head.score(&x)?;
        match &self.adjustment {
            Adjustment::None => Ok(z),
            Adjustment::Calibration(params) => params.apply(&x, &z),
            Adjustment::Lws(scales) => Ok(lws_apply(&z, scales)),
            Adjustment::LogitAdjust {
                frequencies,
                config,
            } => logit_adjust(&z, frequencies, config),
            Adjustment::Tde(cfg) => tde_adjust(&z, &x, &self.head, cfg),
        }
    }
}

impl Predictor for Model {
    fn predict(&self, raw: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(raw)?))
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Adapter for ad-hoc predictors.
pub struct FnPredictor<F> {
    name: String,
    f: F,
}

impl<F: Fn(&[f64]) -> usize> FnPredictor<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(&[f64]) -> usize> Predictor for FnPredictor<F> {
    fn predict(&self, raw: &[f64]) -> Result<usize> {
        Ok((self.f)(raw))
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}
