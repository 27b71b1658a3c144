//! Experiment configuration.
//!
//! A config file is line-oriented `key = value` text with dotted section
//! names (TOML syntax), e.g.
//!
//! ```text
//! seed = 3
//! data.num_classes = 30
//! align.rho = 1.5
//! model.head = "cosine"
//! ```
//!
//! Every key has a default; unknown keys are rejected. Individual keys can be
//! overridden after loading with [`ExperimentConfig::load_with_overrides`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationFlags;
use crate::data::{CountProfile, GenSpec, SamplerKind};
use crate::error::{Error, Result};
use crate::eval::GroupThresholds;
use crate::heads::{HeadKind, ModelSpec};
use crate::rng::{derive_seed, tags};
use crate::trainer::{Schedule, SgdConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub profile: CountProfile,
    pub max_count: usize,
    pub min_count: usize,
    pub pareto_power: f64,
    pub mean_scale: f64,
    pub noise_scale: f64,
    /// Per-class size of the balanced test set.
    pub test_per_class: usize,
    /// Per-class size of the balanced set used to train the bound head.
    pub bound_per_class: usize,
    /// Load training data from an LTDS file instead of generating it.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenSpec::default();
        Self {
            num_classes: g.num_classes,
            feature_dim: g.feature_dim,
            profile: g.profile,
            max_count: g.max_count,
            min_count: g.min_count,
            pareto_power: g.pareto_power,
            mean_scale: g.mean_scale,
            noise_scale: g.noise_scale,
            test_per_class: 25,
            bound_per_class: 200,
            train_path: None,
            test_path: None,
        }
    }
}

/// SGD settings of one training phase; the seed comes from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdSection {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub sampler: SamplerKind,
    pub weight_decay: f64,
    pub full_batch: bool,
}

impl SgdSection {
    fn from_config(c: SgdConfig) -> Self {
        Self {
            lr0: c.lr0,
            momentum: c.momentum,
            batch_size: c.batch_size,
            epochs: c.epochs,
            schedule: c.schedule,
            sampler: c.sampler,
            weight_decay: c.weight_decay,
            full_batch: c.full_batch,
        }
    }

    pub fn to_sgd(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            schedule: self.schedule,
            sampler: self.sampler,
            weight_decay: self.weight_decay,
            full_batch: self.full_batch,
            seed,
        }
    }
}

impl Default for SgdSection {
    fn default() -> Self {
        Self::from_config(SgdConfig::stage1())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignSection {
    /// Re-weighting scale; defaults by head kind when unset.
    pub rho: Option<f64>,
    pub magnitude: bool,
    pub margin: bool,
    pub confidence: bool,
    /// When off, class weights are uniform (equivalent to `rho = 0`).
    pub reweight: bool,
}

impl Default for AlignSection {
    fn default() -> Self {
        Self {
            rho: None,
            magnitude: true,
            margin: true,
            confidence: true,
            reweight: true,
        }
    }
}

impl AlignSection {
    pub fn flags(&self) -> CalibrationFlags {
        CalibrationFlags {
            magnitude: self.magnitude,
            margin: self.margin,
            confidence: self.confidence,
        }
    }
}

pub fn default_rho(kind: HeadKind) -> f64 {
    match kind {
        HeadKind::Linear => 1.2,
        HeadKind::Cosine => 1.5,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub tau: f64,
    pub logit_adjust_lambda: f64,
    pub tde_lambda: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            tau: 1.0,
            logit_adjust_lambda: 1.0,
            tde_lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// ρ values for `sweep-rho` and `weight-curve`.
    pub rhos: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            rhos: vec![0.0, 0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    pub samplers: Vec<SamplerKind>,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            samplers: SamplerKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelSpec,
    pub stage1: SgdSection,
    pub stage2: SgdSection,
    pub align: AlignSection,
    /// SGD for head retraining: cRT, LWS and the bound head.
    pub retrain: SgdSection,
    pub baseline: BaselineSection,
    pub groups: GroupThresholds,
    pub sweep: SweepSection,
    pub bound: BoundSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            model: ModelSpec::default(),
            stage1: SgdSection::default(),
            stage2: SgdSection::from_config(SgdConfig::stage2()),
            align: AlignSection::default(),
            retrain: SgdSection::from_config(SgdConfig::stage2()),
            baseline: BaselineSection::default(),
            groups: GroupThresholds::default(),
            sweep: SweepSection::default(),
            bound: BoundSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim().replace('\n', " "))
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_err(format!("empty key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::with_overrides(s, &[])
    }

    /// Parse `text`, then apply `key=value` overrides with dotted keys.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        for (k, v) in overrides {
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_with_overrides(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_spec().validate()?;
        self.groups.validate()?;
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2), ("retrain", &self.retrain)] {
            s.to_sgd(0)
                .validate()
                .map_err(|e| config_err(format!("{name}: {e}")))?;
        }
        if self.data.test_per_class == 0 || self.data.bound_per_class == 0 {
            return Err(config_err("data.test_per_class and data.bound_per_class must be positive"));
        }
        if let Some(rho) = self.align.rho {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(config_err(format!("align.rho must be >= 0, got {rho}")));
            }
        }
        if self.model.head == HeadKind::Cosine && (self.model.scale.is_nan() || self.model.scale <= 0.0) {
            return Err(config_err("model.scale must be positive for cosine heads"));
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> GenSpec {
        let d = &self.data;
        GenSpec {
            num_classes: d.num_classes,
            feature_dim: d.feature_dim,
            profile: d.profile,
            max_count: d.max_count,
            min_count: d.min_count,
            pareto_power: d.pareto_power,
            mean_scale: d.mean_scale,
            noise_scale: d.noise_scale,
            seed: self.seed,
        }
    }

    pub fn stage1_sgd(&self) -> SgdConfig {
        self.stage1.to_sgd(derive_seed(self.seed, tags::STAGE1))
    }

    pub fn stage2_sgd(&self) -> SgdConfig {
        self.stage2.to_sgd(derive_seed(self.seed, tags::STAGE2))
    }

    pub fn retrain_sgd(&self) -> SgdConfig {
        self.retrain.to_sgd(derive_seed(self.seed, tags::RETRAIN))
    }

    /// ρ used by stage 2 after applying the re-weighting switch and the
    /// head-dependent default.
    pub fn effective_rho(&self) -> f64 {
        if !self.align.reweight {
            return 0.0;
        }
        self.align.rho.unwrap_or_else(|| default_rho(self.model.head))
    }
}
