use serde::{Deserialize, Serialize};

use super::{evaluate, EvalReport, Group, GroupThresholds};
use crate::calibration::CalibrationFlags;
use crate::data::{balanced_twin, generate_longtail, GenSpec, LongTailDataset, SamplerKind};
use crate::error::{Error, Result};
use crate::frozen::FrozenFeatures;
use crate::heads::{EncoderParams, HeadParams, ModelSpec};
use crate::model::{Adjustment, Model};
use crate::rng::{derive_seed, tags};
use crate::trainer::{train_bound, train_disalign_frozen, train_joint, SgdConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub report: EvalReport,
}

fn group_cell(report: &EvalReport, g: Group) -> String {
    report.group(g).map(|a| a.to_string()).unwrap_or_default()
}

impl SweepRow {
    /// Header `rho,balanced_accuracy,many,medium,few`; absent groups are empty
    /// cells.
    pub fn to_csv(rows: &[SweepRow]) -> String {
        let mut out = String::from("rho,balanced_accuracy,many,medium,few\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.rho,
                r.report.balanced_accuracy,
                group_cell(&r.report, Group::Many),
                group_cell(&r.report, Group::Medium),
                group_cell(&r.report, Group::Few),
            ));
        }
        out
    }
}

/// Train a calibration per ρ from the same initialization and seed, and
/// evaluate each on `test_set`.
#[allow(clippy::too_many_arguments)]
pub fn rho_sweep(
    train: &LongTailDataset,
    encoder: &EncoderParams,
    head: &HeadParams,
    rhos: &[f64],
    flags: CalibrationFlags,
    sgd: &SgdConfig,
    test_set: &LongTailDataset,
    thresholds: &GroupThresholds,
) -> Result<Vec<SweepRow>> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("rho list must not be empty".into()));
    }
    let frozen = FrozenFeatures::compute(train, encoder, head)?;
    rhos.iter()
        .map(|&rho| {
            let (params, _) = train_disalign_frozen(&frozen, train.class_counts(), rho, flags, sgd)?;
            let model = Model::new(format!("disalign rho={rho}"), encoder.clone(), head.clone())
                .with_adjustment(Adjustment::Calibration(params));
            let report = evaluate(test_set, &model, train.class_counts(), thresholds)?;
            Ok(SweepRow { rho, report })
        })
        .collect()
}

/// Settings of the representation-bound study.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundStudySpec {
    pub gen: GenSpec,
    pub samplers: Vec<SamplerKind>,
    pub model: ModelSpec,
    pub stage1: SgdConfig,
    pub bound: SgdConfig,
    /// Samples per class in the balanced retraining set.
    pub per_class: usize,
    pub test_per_class: usize,
    pub thresholds: GroupThresholds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub sampler: SamplerKind,
    pub baseline: EvalReport,
    pub bound: EvalReport,
}

impl BoundRow {
    pub fn to_csv(rows: &[BoundRow]) -> String {
        let mut out = String::from(
            "sampler,baseline_balanced_accuracy,bound_balanced_accuracy,\
             baseline_many,baseline_medium,baseline_few,bound_many,bound_medium,bound_few\n",
        );
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.sampler,
                r.baseline.balanced_accuracy,
                r.bound.balanced_accuracy,
                group_cell(&r.baseline, Group::Many),
                group_cell(&r.baseline, Group::Medium),
                group_cell(&r.baseline, Group::Few),
                group_cell(&r.bound, Group::Many),
                group_cell(&r.bound, Group::Medium),
                group_cell(&r.bound, Group::Few),
            ));
        }
        out
    }
}

/// For each sampler: stage-1 joint training on the long-tail set, evaluation of
/// the joint head, then a fresh head trained on a balanced twin over the frozen
/// encoder and evaluated on the same test set.
pub fn bound_study(spec: &BoundStudySpec) -> Result<Vec<BoundRow>> {
    if spec.samplers.is_empty() {
        return Err(Error::InvalidArgument("at least one sampler kind is required".into()));
    }
    let train = generate_longtail(&spec.gen)?;
    let test = balanced_twin(&train, spec.test_per_class, derive_seed(spec.gen.seed, tags::TEST_SET))?;
    let ideal = balanced_twin(&train, spec.per_class, derive_seed(spec.gen.seed, tags::BOUND_SET))?;
    let init_seed = derive_seed(spec.gen.seed, tags::MODEL_INIT);
    let encoder0 = spec.model.init_encoder(train.dim(), init_seed)?;
    let head0 = spec
        .model
        .init_head(train.num_classes(), encoder0.output_dim(), init_seed)?;
    let counts = train.class_counts();

    spec.samplers
        .iter()
        .map(|&sampler| {
            let cfg = SgdConfig {
                sampler,
                ..spec.stage1.clone()
            };
            let (encoder, head, _) = train_joint(&train, &encoder0, &head0, &cfg)?;
            let joint = Model::new(format!("joint ({sampler})"), encoder.clone(), head);
            let baseline = evaluate(&test, &joint, counts, &spec.thresholds)?;
            let bound_head = train_bound(&ideal, &encoder, &spec.model, &spec.bound)?;
            let bound_model = Model::new(format!("cls-bound ({sampler})"), encoder, bound_head);
            let bound = evaluate(&test, &bound_model, counts, &spec.thresholds)?;
            Ok(BoundRow {
                sampler,
                baseline,
                bound,
            })
        })
        .collect()
}
