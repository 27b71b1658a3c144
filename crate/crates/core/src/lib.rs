//! Post-hoc distribution-alignment calibration for long-tailed
//! classification.
//!
//! The crate covers synthetic long-tail data generation, a small encoder with
//! linear or cosine classifier heads, the two-stage training scheme (joint
//! training followed by calibration against a re-weighted loss), a set of
//! decoupled baselines, and per-group evaluation.

pub mod baselines;
pub mod calibration;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod frozen;
pub mod heads;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use calibration::{
    disalign_gradients, disalign_loss, export_weight_curve, grw_weights, CalibrationFlags,
    CalibrationGrads, CalibrationParams, ReweightVector, WeightCurve,
};
pub use config::ExperimentConfig;
pub use data::{
    balanced_twin, class_frequencies, generate_longtail, ClassFrequencies, CountProfile, GenSpec,
    LongTailDataset, Sampler, SamplerKind,
};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, Group, GroupThresholds};
pub use frozen::FrozenFeatures;
pub use heads::{EncoderParams, HeadKind, HeadParams, ModelSpec};
pub use io::Checkpoint;
pub use linalg::Matrix;
pub use model::{Adjustment, Model, Predictor};
pub use trainer::{Schedule, SgdConfig, TrainTrace};
