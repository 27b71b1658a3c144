//! End-to-end experiment steps driven by an [`ExperimentConfig`].

use std::fmt;
use std::str::FromStr;

use crate::baselines::{crt_train, lws_train_frozen, LogitAdjustConfig, TdeConfig};
use crate::calibration::CalibrationParams;
use crate::config::ExperimentConfig;
use crate::data::{balanced_twin, class_frequencies, generate_longtail, LongTailDataset};
use crate::error::{Error, Result};
use crate::eval::{bound_study, evaluate, BoundRow, BoundStudySpec, EvalReport};
use crate::frozen::FrozenFeatures;
use crate::heads::{ncm_fit, EncoderParams, HeadParams};
use crate::io::ltds::read_dataset;
use crate::model::{Adjustment, Model};
use crate::rng::{derive_seed, tags};
use crate::trainer::{train_bound, train_disalign_frozen, train_joint, TrainTrace};

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: LongTailDataset,
    pub test: LongTailDataset,
}

/// Training set from `data.train_path` or the generator; test set from
/// `data.test_path` or a balanced twin of the training clusters.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let train = match &cfg.data.train_path {
        Some(p) => read_dataset(p)?,
        None => generate_longtail(&cfg.gen_spec())?,
    };
    let test = match &cfg.data.test_path {
        Some(p) => read_dataset(p)?,
        None => balanced_twin(
            &train,
            cfg.data.test_per_class,
            derive_seed(cfg.seed, tags::TEST_SET),
        )?,
    };
    if test.dim() != train.dim() || test.num_classes() != train.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "test set dimensions vs training set",
            expected: train.dim(),
            got: test.dim(),
        });
    }
    Ok(Datasets { train, test })
}

/// Balanced set for the bound head; requires a generated training set.
pub fn bound_dataset(cfg: &ExperimentConfig, train: &LongTailDataset) -> Result<LongTailDataset> {
    balanced_twin(
        train,
        cfg.data.bound_per_class,
        derive_seed(cfg.seed, tags::BOUND_SET),
    )
}

#[derive(Clone, Debug)]
pub struct Stage1 {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub trace: TrainTrace,
}

impl Stage1 {
    pub fn model(&self) -> Model {
        Model::new("joint", self.encoder.clone(), self.head.clone())
    }
}

pub fn run_stage1(cfg: &ExperimentConfig, train: &LongTailDataset) -> Result<Stage1> {
    let seed = derive_seed(cfg.seed, tags::MODEL_INIT);
    let encoder = cfg.model.init_encoder(train.dim(), seed)?;
    let head = cfg
        .model
        .init_head(train.num_classes(), encoder.output_dim(), seed)?;
    let (encoder, head, trace) = train_joint(train, &encoder, &head, &cfg.stage1_sgd())?;
    Ok(Stage1 {
        encoder,
        head,
        trace,
    })
}

#[derive(Clone, Debug)]
pub struct Calibrated {
    pub params: CalibrationParams,
    pub rho: f64,
    pub trace: TrainTrace,
}

/// Stage 2 with the configured ρ and component flags.
pub fn run_calibration(
    cfg: &ExperimentConfig,
    train: &LongTailDataset,
    encoder: &EncoderParams,
    head: &HeadParams,
) -> Result<Calibrated> {
    let frozen = FrozenFeatures::compute(train, encoder, head)?;
    let rho = cfg.effective_rho();
    let (params, trace) = train_disalign_frozen(
        &frozen,
        train.class_counts(),
        rho,
        cfg.align.flags(),
        &cfg.stage2_sgd(),
    )?;
    Ok(Calibrated { params, rho, trace })
}

pub fn calibrated_model(encoder: &EncoderParams, head: &HeadParams, cal: &Calibrated) -> Model {
    Model::new(format!("disalign rho={}", cal.rho), encoder.clone(), head.clone())
        .with_adjustment(Adjustment::Calibration(cal.params.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    Crt,
    Lws,
    TauNorm,
    Ncm,
    LogitAdjust,
    Tde,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 6] = [
        Self::Crt,
        Self::Lws,
        Self::TauNorm,
        Self::Ncm,
        Self::LogitAdjust,
        Self::Tde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Crt => "crt",
            Self::Lws => "lws",
            Self::TauNorm => "tau-norm",
            Self::Ncm => "ncm",
            Self::LogitAdjust => "logit-adjust",
            Self::Tde => "tde",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline method `{s}`")))
    }
}

/// Build a baseline predictor on top of a stage-1 encoder and head.
pub fn run_baseline(
    method: BaselineMethod,
    cfg: &ExperimentConfig,
    train: &LongTailDataset,
    encoder: &EncoderParams,
    head: &HeadParams,
) -> Result<Model> {
    let b = &cfg.baseline;
    let name = match method {
        BaselineMethod::TauNorm => format!("tau-norm tau={}", b.tau),
        BaselineMethod::LogitAdjust => format!("logit-adjust lambda={}", b.logit_adjust_lambda),
        BaselineMethod::Tde => format!("tde lambda={}", b.tde_lambda),
        m => m.to_string(),
    };
    let model = match method {
        BaselineMethod::Crt => {
            let (h, _) = crt_train(train, encoder, cfg.model.head, cfg.model.scale, &cfg.retrain_sgd())?;
            Model::new(name, encoder.clone(), h)
        }
        BaselineMethod::Lws => {
            let frozen = FrozenFeatures::compute(train, encoder, head)?;
            let (scales, _) = lws_train_frozen(&frozen, &cfg.retrain_sgd())?;
            Model::new(name, encoder.clone(), head.clone()).with_adjustment(Adjustment::Lws(scales))
        }
        BaselineMethod::TauNorm => Model::new(name, encoder.clone(), head.tau_normalize(b.tau)?),
        BaselineMethod::Ncm => Model::new(name, encoder.clone(), ncm_fit(train, encoder, cfg.model.scale)?),
        BaselineMethod::LogitAdjust => Model::new(name, encoder.clone(), head.clone()).with_adjustment(
            Adjustment::LogitAdjust {
                frequencies: class_frequencies(train)?,
                config: LogitAdjustConfig {
                    lambda: b.logit_adjust_lambda,
                },
            },
        ),
        BaselineMethod::Tde => {
            let tde = TdeConfig::from_dataset(train, encoder, b.tde_lambda)?;
            Model::new(name, encoder.clone(), head.clone()).with_adjustment(Adjustment::Tde(tde))
        }
    };
    Ok(model)
}

/// Bound head over the stage-1 encoder, trained on the balanced twin.
pub fn run_bound(cfg: &ExperimentConfig, train: &LongTailDataset, encoder: &EncoderParams) -> Result<Model> {
    let ideal = bound_dataset(cfg, train)?;
    let head = train_bound(&ideal, encoder, &cfg.model, &cfg.retrain_sgd())?;
    Ok(Model::new("cls-bound", encoder.clone(), head))
}

pub fn evaluate_model(cfg: &ExperimentConfig, data: &Datasets, model: &Model) -> Result<EvalReport> {
    evaluate(&data.test, model, data.train.class_counts(), &cfg.groups)
}

pub fn run_bound_study(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    bound_study(&BoundStudySpec {
        gen: cfg.gen_spec(),
        samplers: cfg.bound.samplers.clone(),
        model: cfg.model,
        stage1: cfg.stage1_sgd(),
        bound: cfg.retrain_sgd(),
        per_class: cfg.data.bound_per_class,
        test_per_class: cfg.data.test_per_class,
        thresholds: cfg.groups,
    })
}
