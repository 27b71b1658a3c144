use crate::data::LongTailDataset;
use crate::error::{Error, Result};
use crate::heads::{EncoderParams, HeadParams};
use crate::linalg::Matrix;

/// Encoded features and original head logits for every sample of a dataset,
/// computed once against a frozen encoder and head.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenFeatures {
    pub features: Matrix,
    pub logits: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FrozenFeatures {
    pub fn compute(
        dataset: &LongTailDataset,
        encoder: &EncoderParams,
        head: &HeadParams,
    ) -> Result<Self> {
        if head.num_classes() != dataset.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "head classes vs dataset classes",
                expected: dataset.num_classes(),
                got: head.num_classes(),
            });
        }
        let features = encoder.encode_dataset(dataset)?;
        let mut logits = Matrix::zeros(dataset.len(), head.num_classes());
        for i in 0..dataset.len() {
            head.score_into(features.row(i), logits.row_mut(i))?;
        }
        Ok(Self {
            features,
            logits,
            labels: dataset.labels().to_vec(),
            num_classes: dataset.num_classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}
