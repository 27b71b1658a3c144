//! Class-balanced metrics with many/medium/few group reporting.

mod studies;

pub use studies::{bound_study, rho_sweep, BoundRow, BoundStudySpec, SweepRow};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::LongTailDataset;
use crate::error::{Error, Result};
use crate::model::Predictor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Many,
    Medium,
    Few,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Many, Group::Medium, Group::Few];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Many => "many",
            Self::Medium => "medium",
            Self::Few => "few",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training-count thresholds: `count > many_min` is many-shot,
/// `count < few_max` is few-shot, anything in between (inclusive) is medium.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupThresholds {
    pub many_min: usize,
    pub few_max: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            few_max: 20,
        }
    }
}

impl GroupThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.few_max < 1 || self.many_min <= self.few_max {
            return Err(Error::InvalidArgument(format!(
                "group thresholds need many_min > few_max >= 1, got {} and {}",
                self.many_min, self.few_max
            )));
        }
        Ok(())
    }

    pub fn group_of(&self, count: usize) -> Group {
        if count > self.many_min {
            Group::Many
        } else if count < self.few_max {
            Group::Few
        } else {
            Group::Medium
        }
    }
}

pub fn assign_groups(train_counts: &[usize], thresholds: &GroupThresholds) -> Vec<Group> {
    train_counts.iter().map(|&n| thresholds.group_of(n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub balanced_accuracy: f64,
    /// Mean per-class accuracy of each non-empty group.
    pub group_accuracy: BTreeMap<Group, f64>,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_correct: Vec<usize>,
    pub per_class_total: Vec<usize>,
    pub groups: Vec<Group>,
    pub train_counts: Vec<usize>,
    pub thresholds: GroupThresholds,
}

impl EvalReport {
    /// Assemble a report from per-class tallies.
    pub fn from_tallies(
        predictor: String,
        correct: Vec<usize>,
        total: Vec<usize>,
        train_counts: &[usize],
        thresholds: GroupThresholds,
    ) -> Result<Self> {
        thresholds.validate()?;
        if train_counts.len() != total.len() {
            return Err(Error::DimensionMismatch {
                context: "train counts vs classes",
                expected: total.len(),
                got: train_counts.len(),
            });
        }
        if let Some(c) = total.iter().position(|&t| t == 0) {
            return Err(Error::EmptyClass(c));
        }
        let per_class: Vec<f64> = correct
            .iter()
            .zip(&total)
            .map(|(&c, &t)| c as f64 / t as f64)
            .collect();
        let groups = assign_groups(train_counts, &thresholds);
        let mut group_accuracy = BTreeMap::new();
        for g in Group::ALL {
            let members: Vec<f64> = per_class
                .iter()
                .zip(&groups)
                .filter(|(_, &gc)| gc == g)
                .map(|(&a, _)| a)
                .collect();
            if !members.is_empty() {
                group_accuracy.insert(g, mean(&members));
            }
        }
        Ok(Self {
            predictor,
            balanced_accuracy: mean(&per_class),
            group_accuracy,
            per_class_accuracy: per_class,
            per_class_correct: correct,
            per_class_total: total,
            groups,
            train_counts: train_counts.to_vec(),
            thresholds,
        })
    }

    pub fn group(&self, g: Group) -> Option<f64> {
        self.group_accuracy.get(&g).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-class table: `class,group,train_count,test_count,correct,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,group,train_count,test_count,correct,accuracy\n");
        for c in 0..self.per_class_accuracy.len() {
            out.push_str(&format!(
                "{c},{},{},{},{},{}\n",
                self.groups[c],
                self.train_counts[c],
                self.per_class_total[c],
                self.per_class_correct[c],
                self.per_class_accuracy[c]
            ));
        }
        out
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Score `predictor` on `test_set`. Every class must appear in the test set.
pub fn evaluate(
    test_set: &LongTailDataset,
    predictor: &dyn Predictor,
    train_counts: &[usize],
    thresholds: &GroupThresholds,
) -> Result<EvalReport> {
    let k = test_set.num_classes();
    let mut correct = vec![0usize; k];
    let mut total = vec![0usize; k];
    for i in 0..test_set.len() {
        let y = test_set.labels()[i];
        total[y] += 1;
        if predictor.predict(&test_set.row_f64(i))? == y {
            correct[y] += 1;
        }
    }
    EvalReport::from_tallies(predictor.describe(), correct, total, train_counts, *thresholds)
}
