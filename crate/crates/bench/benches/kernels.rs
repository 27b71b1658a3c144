use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use disalign::trainer::joint_gradients;
use disalign::{
    class_frequencies, disalign_gradients, evaluate, generate_longtail, grw_weights,
    CalibrationFlags, CalibrationParams, EncoderParams, FrozenFeatures, GenSpec, GroupThresholds,
    HeadKind, HeadParams, LongTailDataset, Model,
};

const K: usize = 30;
const D: usize = 32;
const H: usize = 64;

fn dataset() -> LongTailDataset {
    generate_longtail(&GenSpec {
        num_classes: K,
        feature_dim: D,
        max_count: 200,
        min_count: 2,
        noise_scale: 1.5,
        ..GenSpec::default()
    })
    .unwrap()
}

fn model() -> (EncoderParams, HeadParams) {
    (
        EncoderParams::random(D, H, 1).unwrap(),
        HeadParams::random(K, H, HeadKind::Linear, 1.0, 2).unwrap(),
    )
}

fn kernels(c: &mut Criterion) {
    let ds = dataset();
    let (enc, head) = model();
    let batch: Vec<usize> = (0..128).map(|i| (i * 37) % ds.len()).collect();

    let frozen = FrozenFeatures::compute(&ds, &enc, &head).unwrap();
    let w = grw_weights(&class_frequencies(&ds).unwrap(), 1.2).unwrap();
    let params = CalibrationParams::new(K, H, CalibrationFlags::FULL);
    c.bench_function("disalign_gradients/b128", |b| {
        b.iter(|| disalign_gradients(&frozen, black_box(&batch), &params, &w).unwrap())
    });

    c.bench_function("joint_gradients/b128", |b| {
        b.iter(|| joint_gradients(&ds, black_box(&batch), &enc, &head).unwrap())
    });

    c.bench_function("frozen_features", |b| {
        b.iter(|| FrozenFeatures::compute(black_box(&ds), &enc, &head).unwrap())
    });

    let spec = GenSpec { num_classes: K, feature_dim: D, max_count: 200, min_count: 2, ..GenSpec::default() };
    c.bench_function("generate_longtail", |b| {
        b.iter_batched(|| spec.clone(), |s| generate_longtail(&s).unwrap(), BatchSize::SmallInput)
    });

    let m = Model::new("bench", enc.clone(), head.clone());
    let thresholds = GroupThresholds::default();
    c.bench_function("evaluate", |b| {
        b.iter(|| evaluate(black_box(&ds), &m, ds.class_counts(), &thresholds).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
