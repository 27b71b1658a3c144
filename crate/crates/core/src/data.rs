//! Synthetic long-tail datasets, class statistics and the stage-1 samplers.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream_rng, streams, Rng};

/// Shape of the per-class count profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountProfile {
    /// `n_c = round(n_max · (n_min/n_max)^(c/(K−1)))`
    Exponential,
    /// `n_c = max(n_min, round(n_max · (c+1)^(−1/power)))`
    Pareto,
}

impl FromStr for CountProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            "pareto" => Ok(Self::Pareto),
            other => Err(Error::InvalidArgument(format!("unknown count profile `{other}`"))),
        }
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub profile: CountProfile,
    pub max_count: usize,
    pub min_count: usize,
    pub pareto_power: f64,
    pub mean_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            num_classes: 30,
            feature_dim: 64,
            profile: CountProfile::Exponential,
            max_count: 200,
            min_count: 2,
            pareto_power: 6.0,
            mean_scale: 1.0,
            noise_scale: 0.7,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 {
            return fail("feature_dim must be >= 1".into());
        }
        if self.min_count < 1 {
            return fail("min_count must be >= 1".into());
        }
        if self.max_count < self.min_count {
            return fail(format!(
                "max_count ({}) must be >= min_count ({})",
                self.max_count, self.min_count
            ));
        }
        if !self.mean_scale.is_finite() || self.mean_scale < 0.0 {
            return fail(format!("mean_scale must be finite and >= 0, got {}", self.mean_scale));
        }
        if !self.noise_scale.is_finite() || self.noise_scale <= 0.0 {
            return fail(format!("noise_scale must be finite and > 0, got {}", self.noise_scale));
        }
        if self.profile == CountProfile::Pareto
            && (!self.pareto_power.is_finite() || self.pareto_power <= 0.0)
        {
            return fail(format!("pareto_power must be finite and > 0, got {}", self.pareto_power));
        }
        Ok(())
    }

    pub fn imbalance_ratio(&self) -> f64 {
        self.max_count as f64 / self.min_count as f64
    }

    /// Per-class sample counts, class 0 being the most frequent.
    pub fn class_counts(&self) -> Vec<usize> {
        let k = self.num_classes;
        let (n_max, n_min) = (self.max_count as f64, self.min_count as f64);
        (0..k)
            .map(|c| match self.profile {
                CountProfile::Exponential => {
                    let t = c as f64 / (k - 1) as f64;
                    (n_max * (n_min / n_max).powf(t)).round() as usize
                }
                CountProfile::Pareto => {
                    let n = (n_max * ((c + 1) as f64).powf(-1.0 / self.pareto_power)).round();
                    (n as usize).max(self.min_count)
                }
            })
            .collect()
    }
}

/// Class-conditional Gaussian clusters a dataset was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub means: Matrix,
    pub noise_scale: f64,
}

impl ClusterModel {
    fn draw_into(&self, class: usize, count: usize, rng: &mut Rng, out: &mut Vec<f32>) {
        let mean = self.means.row(class);
        for _ in 0..count {
            for &m in mean {
                let eps: f64 = StandardNormal.sample(rng);
                out.push((m + self.noise_scale * eps) as f32);
            }
        }
    }
}

/// Feature matrix plus labels. Features are stored as `f32`, the precision of
/// the on-disk format, so persisted datasets round-trip exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct LongTailDataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    class_counts: Vec<usize>,
    seed: u64,
    clusters: Option<ClusterModel>,
}

impl LongTailDataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "dataset features",
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                location: format!("sample {}, feature {}", i / dim.max(1), i % dim.max(1)),
                message: "non-finite feature value".into(),
            });
        }
        let mut class_counts = vec![0usize; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Malformed {
                    location: format!("sample {i}"),
                    message: format!("label {y} out of range for {num_classes} classes"),
                });
            }
            class_counts[y] += 1;
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
            class_counts,
            seed,
            clusters: None,
        })
    }

    pub fn with_clusters(mut self, clusters: ClusterModel) -> Self {
        self.clusters = Some(clusters);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clusters(&self) -> Option<&ClusterModel> {
        self.clusters.as_ref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Sample indices grouped by class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        class_members(&self.labels, self.num_classes)
    }

    /// `Some(per_class)` when every class holds the same number of samples.
    pub fn balanced_count(&self) -> Option<usize> {
        let first = *self.class_counts.first()?;
        self.class_counts.iter().all(|&c| c == first).then_some(first)
    }
}

pub(crate) fn class_members(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    members
}

/// Draw a long-tail dataset. Class `c`'s samples come from their own random
/// stream, so the draws for one class do not depend on any other class.
pub fn generate_longtail(spec: &GenSpec) -> Result<LongTailDataset> {
    spec.validate()?;
    let (k, d) = (spec.num_classes, spec.feature_dim);
    let counts = spec.class_counts();

    let mut mean_rng = stream_rng(spec.seed, streams::CLASS_MEANS);
    let means: Vec<f64> = (0..k * d)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut mean_rng);
            spec.mean_scale * g
        })
        .collect();
    let clusters = ClusterModel {
        means: Matrix::from_vec(k, d, means)?,
        noise_scale: spec.noise_scale,
    };

    let n: usize = counts.iter().sum();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, &count) in counts.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, streams::CLASS_SAMPLES + c as u64);
        clusters.draw_into(c, count, &mut rng, &mut features);
        labels.extend(std::iter::repeat_n(c, count));
    }
    Ok(LongTailDataset::new(features, labels, d, k, spec.seed)?.with_clusters(clusters))
}

/// Fresh draws from the same class clusters, `per_class` samples per class.
///
/// The twin's streams are disjoint from the generator's, so even with the
/// original seed no sample is repeated.
pub fn balanced_twin(
    dataset: &LongTailDataset,
    per_class: usize,
    seed: u64,
) -> Result<LongTailDataset> {
    if per_class < 1 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    let clusters = dataset.clusters().ok_or(Error::NoClusterModel)?;
    let (k, d) = (dataset.num_classes(), dataset.dim());
    let mut features = Vec::with_capacity(k * per_class * d);
    let mut labels = Vec::with_capacity(k * per_class);
    for c in 0..k {
        let mut rng = stream_rng(seed, streams::TWIN_SAMPLES + c as u64);
        clusters.draw_into(c, per_class, &mut rng, &mut features);
        labels.extend(std::iter::repeat_n(c, per_class));
    }
    Ok(LongTailDataset::new(features, labels, d, k, seed)?.with_clusters(clusters.clone()))
}

/// Empirical class frequencies `r_c = n_c / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassFrequencies(Vec<f64>);

impl ClassFrequencies {
    /// Frequencies from raw counts; every class must be present.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let total: usize = counts.iter().sum();
        Ok(Self(counts.iter().map(|&n| n as f64 / total as f64).collect()))
    }

    /// Wrap already-normalized frequencies. Entries must be positive and sum
    /// to one within 1e-9.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(c) = values.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::ZeroFrequency(c));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "frequencies must sum to 1, got {sum}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn class_frequencies(dataset: &LongTailDataset) -> Result<ClassFrequencies> {
    ClassFrequencies::from_counts(dataset.class_counts())
}

/// How training indices are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    InstanceBalanced,
    ClassBalanced,
    SquareRoot,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [
        SamplerKind::InstanceBalanced,
        SamplerKind::ClassBalanced,
        SamplerKind::SquareRoot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InstanceBalanced => "instance_balanced",
            Self::ClassBalanced => "class_balanced",
            Self::SquareRoot => "square_root",
        }
    }

    fn class_weight(self, count: usize) -> f64 {
        if count == 0 {
            return 0.0;
        }
        match self {
            Self::InstanceBalanced => count as f64,
            Self::ClassBalanced => 1.0,
            Self::SquareRoot => (count as f64).sqrt(),
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler `{s}`")))
    }
}

/// Analytic probability of drawing each class under `kind`.
pub fn class_marginals(kind: SamplerKind, counts: &[usize]) -> Vec<f64> {
    let w: Vec<f64> = counts.iter().map(|&n| kind.class_weight(n)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Draws sample indices with replacement: first a class from the sampler's
/// class marginal, then a member of that class uniformly.
#[derive(Clone, Debug)]
pub struct Sampler {
    kind: SamplerKind,
    len: usize,
    members: Vec<Vec<usize>>,
    classes: WeightedIndex<f64>,
}

impl Sampler {
    pub fn new(kind: SamplerKind, dataset: &LongTailDataset) -> Result<Self> {
        Self::from_labels(kind, dataset.labels(), dataset.num_classes())
    }

    pub fn from_labels(kind: SamplerKind, labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty dataset".into()));
        }
        let members = class_members(labels, num_classes);
        let weights = members.iter().map(|m| kind.class_weight(m.len()));
        let classes = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidArgument(format!("sampler weights: {e}")))?;
        Ok(Self {
            kind,
            len: labels.len(),
            members,
            classes,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn next_index(&self, rng: &mut Rng) -> usize {
        if self.kind == SamplerKind::InstanceBalanced {
            return rng.random_range(0..self.len);
        }
        let members = &self.members[self.classes.sample(rng)];
        members[rng.random_range(0..members.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, profile: CountProfile, n_max: usize, n_min: usize) -> GenSpec {
        GenSpec {
            num_classes: k,
            feature_dim: 3,
            profile,
            max_count: n_max,
            min_count: n_min,
            ..GenSpec::default()
        }
    }

    #[test]
    fn exponential_counts_hand_values() {
        let s = spec(3, CountProfile::Exponential, 100, 1);
        assert_eq!(s.class_counts(), vec![100, 10, 1]);
    }

    #[test]
    fn degenerate_profiles_are_balanced() {
        for profile in [CountProfile::Exponential, CountProfile::Pareto] {
            assert_eq!(spec(4, profile, 50, 50).class_counts(), vec![50; 4]);
        }
    }

    #[test]
    fn pareto_large_k_non_increasing() {
        let s = GenSpec {
            pareto_power: 6.0,
            ..spec(1000, CountProfile::Pareto, 1280, 5)
        };
        let counts = s.class_counts();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        assert!(counts.iter().all(|&n| n >= 5));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_longtail(&spec(1, CountProfile::Exponential, 10, 1)).is_err());
        assert!(generate_longtail(&spec(3, CountProfile::Exponential, 10, 0)).is_err());
        let mut s = spec(3, CountProfile::Exponential, 10, 1);
        s.noise_scale = f64::NAN;
        assert!(matches!(generate_longtail(&s), Err(Error::InvalidSpec(_))));
        s.noise_scale = 1.0;
        s.mean_scale = f64::INFINITY;
        assert!(generate_longtail(&s).is_err());
    }

    #[test]
    fn generated_dataset_matches_counts() {
        let s = spec(5, CountProfile::Exponential, 40, 2);
        let ds = generate_longtail(&s).unwrap();
        assert_eq!(ds.class_counts(), s.class_counts().as_slice());
        assert_eq!(ds.len(), s.class_counts().iter().sum::<usize>());
        assert!(ds.features().iter().all(|v| v.is_finite()));
        assert_eq!(generate_longtail(&s).unwrap(), ds);
    }

    #[test]
    fn twin_counts_and_determinism() {
        let ds = generate_longtail(&spec(3, CountProfile::Exponential, 30, 2)).unwrap();
        let t = balanced_twin(&ds, 20, 9).unwrap();
        assert_eq!(t.class_counts(), &[20, 20, 20]);
        assert_eq!(balanced_twin(&ds, 20, 9).unwrap(), t);
        let one = balanced_twin(&ds, 1, 9).unwrap();
        assert_eq!(one.len(), 3);
        assert!(balanced_twin(&ds, 0, 9).is_err());
    }

    #[test]
    fn twin_draws_differ_from_original_even_with_same_seed() {
        let ds = generate_longtail(&spec(2, CountProfile::Exponential, 10, 10)).unwrap();
        let t = balanced_twin(&ds, 10, ds.seed()).unwrap();
        assert_ne!(t.features(), ds.features());
    }

    #[test]
    fn twin_requires_cluster_model() {
        let ds = LongTailDataset::new(vec![0.0; 4], vec![0, 1], 2, 2, 0).unwrap();
        assert!(matches!(balanced_twin(&ds, 3, 0), Err(Error::NoClusterModel)));
    }

    #[test]
    fn frequency_hand_values() {
        let r = ClassFrequencies::from_counts(&[2, 1, 1]).unwrap();
        assert_eq!(r.values(), &[0.5, 0.25, 0.25]);
        let r = ClassFrequencies::from_counts(&[999, 1]).unwrap();
        assert_eq!(r.values(), &[0.999, 0.001]);
        let r = ClassFrequencies::from_counts(&[7; 4]).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.25));
        assert!(matches!(
            ClassFrequencies::from_counts(&[3, 0, 1]),
            Err(Error::EmptyClass(1))
        ));
    }

    #[test]
    fn dataset_rejects_bad_labels_and_values() {
        assert!(LongTailDataset::new(vec![0.0; 2], vec![0, 2], 1, 2, 0).is_err());
        assert!(LongTailDataset::new(vec![0.0, f32::NAN], vec![0, 1], 1, 2, 0).is_err());
        assert!(LongTailDataset::new(vec![0.0; 3], vec![0, 1], 1, 2, 0).is_err());
    }

    #[test]
    fn analytic_marginals() {
        let m = class_marginals(SamplerKind::SquareRoot, &[4, 1]);
        assert!((m[0] - 2.0 / 3.0).abs() < 1e-15 && (m[1] - 1.0 / 3.0).abs() < 1e-15);
        for kind in SamplerKind::ALL {
            assert_eq!(class_marginals(kind, &[5, 5, 5, 5]), vec![0.25; 4]);
        }
    }

    #[test]
    fn class_balanced_monte_carlo() {
        let labels: Vec<usize> = std::iter::repeat_n(0, 100).chain([1]).collect();
        let s = Sampler::from_labels(SamplerKind::ClassBalanced, &labels, 2).unwrap();
        let mut rng = stream_rng(3, streams::SAMPLER);
        let n = 100_000;
        let zeros = (0..n).filter(|_| labels[s.next_index(&mut rng)] == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn sampler_skips_empty_classes_and_rejects_empty_data() {
        let s = Sampler::from_labels(SamplerKind::ClassBalanced, &[0, 0, 2], 3).unwrap();
        let mut rng = stream_rng(1, 0);
        assert!((0..1000).all(|_| s.next_index(&mut rng) != 5));
        assert!(Sampler::from_labels(SamplerKind::InstanceBalanced, &[], 2).is_err());
    }

    #[test]
    fn sampler_kind_parses() {
        for k in SamplerKind::ALL {
            assert_eq!(k.as_str().parse::<SamplerKind>().unwrap(), k);
        }
        assert!("uniform".parse::<SamplerKind>().is_err());
    }
}
