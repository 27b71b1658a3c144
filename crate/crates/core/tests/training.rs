//! Optimizer and trainer behavior on small problems.

use disalign::baselines::{crt_train, lws_train};
use disalign::heads::argmax;
use disalign::trainer::{train_disalign, train_head, train_joint};
use disalign::{
    generate_longtail, CalibrationFlags, CalibrationParams, EncoderParams, GenSpec, HeadKind,
    HeadParams, LongTailDataset, Schedule, SgdConfig,
};

fn toy(seed: u64) -> LongTailDataset {
    generate_longtail(&GenSpec {
        num_classes: 5,
        feature_dim: 6,
        max_count: 40,
        min_count: 4,
        noise_scale: 1.0,
        seed,
        ..GenSpec::default()
    })
    .unwrap()
}

fn full_batch(lr0: f64, epochs: usize) -> SgdConfig {
    SgdConfig {
        lr0,
        epochs,
        schedule: Schedule::Constant,
        full_batch: true,
        ..SgdConfig::stage1()
    }
}

fn non_increasing(losses: &[f64]) -> bool {
    losses.windows(2).all(|w| w[1] <= w[0] + 1e-6)
}

#[test]
fn full_batch_losses_descend_for_every_trainer() {
    let cfg = full_batch(1e-3, 5);
    for kind in [HeadKind::Linear, HeadKind::Cosine] {
        let ds = toy(1);
        let enc = EncoderParams::random(6, 8, 2).unwrap();
        let head = HeadParams::random(5, 8, kind, 16.0, 3).unwrap();
        let (e1, h1, t) = train_joint(&ds, &enc, &head, &cfg).unwrap();
        assert!(non_increasing(&t.losses()), "joint {kind}: {:?}", t.losses());
        let (_, t) = train_disalign(&ds, &e1, &h1, 1.2, CalibrationFlags::FULL, &cfg).unwrap();
        assert!(non_increasing(&t.losses()), "disalign {kind}: {:?}", t.losses());
        let (_, t) = lws_train(&ds, &e1, &h1, &cfg).unwrap();
        assert!(non_increasing(&t.losses()), "lws {kind}: {:?}", t.losses());
        let (_, t) = crt_train(&ds, &e1, kind, 16.0, &cfg).unwrap();
        assert!(non_increasing(&t.losses()), "crt {kind}: {:?}", t.losses());
    }
}

#[test]
fn full_batch_joint_training_reduces_loss_substantially() {
    let ds = toy(4);
    let enc = EncoderParams::random(6, 16, 5).unwrap();
    let head = HeadParams::random(5, 16, HeadKind::Linear, 1.0, 6).unwrap();
    let (_, _, t) = train_joint(&ds, &enc, &head, &full_batch(0.05, 200)).unwrap();
    let l = t.losses();
    assert!(l[l.len() - 1] < 0.5 * l[0], "{} -> {}", l[0], l[l.len() - 1]);
}

#[test]
fn zero_learning_rate_without_momentum_changes_nothing() {
    let ds = toy(2);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Linear, 1.0, 3).unwrap();
    let cfg = SgdConfig {
        lr0: 0.0,
        momentum: 0.0,
        epochs: 3,
        batch_size: 7,
        ..SgdConfig::stage1()
    };
    let (e, h, t) = train_joint(&ds, &enc, &head, &cfg).unwrap();
    assert_eq!((e, h), (enc.clone(), head.clone()));
    assert_eq!(t.epochs.len(), 3);
    let (cal, _) = train_disalign(&ds, &enc, &head, 1.0, CalibrationFlags::FULL, &cfg).unwrap();
    assert_eq!(cal, CalibrationParams::new(5, 8, CalibrationFlags::FULL));
}

#[test]
fn zero_epochs_return_the_initialization() {
    let ds = toy(3);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Cosine, 16.0, 3).unwrap();
    let cfg = SgdConfig { epochs: 0, ..SgdConfig::stage1() };
    let (e, h, t) = train_joint(&ds, &enc, &head, &cfg).unwrap();
    assert_eq!((&e, &h), (&enc, &head));
    assert!(t.epochs.is_empty());
    let (cal, _) = train_disalign(&ds, &enc, &head, 1.0, CalibrationFlags::FULL, &cfg).unwrap();
    assert_eq!(cal, CalibrationParams::new(5, 8, CalibrationFlags::FULL));
    let (scales, _) = lws_train(&ds, &enc, &head, &cfg).unwrap();
    assert_eq!(scales, vec![1.0; 5]);
    let (fresh, _) = crt_train(&ds, &enc, HeadKind::Linear, 1.0, &cfg).unwrap();
    let (again, _) = crt_train(&ds, &enc, HeadKind::Linear, 1.0, &cfg).unwrap();
    assert_eq!(fresh, again);
}

#[test]
fn training_is_deterministic() {
    let ds = toy(5);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Linear, 1.0, 3).unwrap();
    let cfg = SgdConfig { epochs: 4, batch_size: 16, seed: 99, ..SgdConfig::stage1() };
    let a = train_joint(&ds, &enc, &head, &cfg).unwrap();
    let b = train_joint(&ds, &enc, &head, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2.to_csv(), b.2.to_csv());
    let c = train_disalign(&ds, &a.0, &a.1, 1.5, CalibrationFlags::FULL, &cfg).unwrap();
    let d = train_disalign(&ds, &a.0, &a.1, 1.5, CalibrationFlags::FULL, &cfg).unwrap();
    assert_eq!(c.0, d.0);
    assert_eq!(c.1, d.1);

    let other = train_joint(&ds, &enc, &head, &SgdConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.1, other.1, "sampler seed must matter");
}

#[test]
fn stage2_leaves_encoder_and_head_untouched() {
    let ds = toy(6);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Linear, 1.0, 3).unwrap();
    let (enc_before, head_before) = (enc.clone(), head.clone());
    let cfg = SgdConfig { epochs: 3, ..SgdConfig::stage2() };
    let (cal, _) = train_disalign(&ds, &enc, &head, 1.2, CalibrationFlags::FULL, &cfg).unwrap();
    assert_eq!(enc, enc_before);
    assert_eq!(head, head_before);
    assert_ne!(cal, CalibrationParams::new(5, 8, CalibrationFlags::FULL));
}

#[test]
fn disabled_components_stay_at_initialization() {
    let ds = toy(7);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Linear, 1.0, 3).unwrap();
    let cfg = SgdConfig { epochs: 3, ..SgdConfig::stage2() };
    let flags = CalibrationFlags { magnitude: false, margin: true, confidence: false };
    let (cal, _) = train_disalign(&ds, &enc, &head, 1.0, flags, &cfg).unwrap();
    assert_eq!(cal.alpha, vec![1.0; 5]);
    assert_eq!(cal.conf_weights, vec![0.0; 8]);
    assert_eq!(cal.conf_bias, 0.0);
    assert!(cal.beta.iter().any(|&b| b != 0.0));
}

#[test]
fn separable_two_class_toy_is_learned_within_fifty_epochs() {
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let y = i % 2;
        let sign = if y == 0 { -1.0 } else { 1.0 };
        feats.extend_from_slice(&[sign * (1.0 + (i as f32) * 0.05), (i as f32 * 0.37).sin()]);
        labels.push(y);
    }
    let ds = LongTailDataset::new(feats, labels, 2, 2, 0).unwrap();
    let enc = EncoderParams::random(2, 8, 1).unwrap();
    let head = HeadParams::random(2, 8, HeadKind::Linear, 1.0, 2).unwrap();
    let cfg = SgdConfig { epochs: 50, batch_size: 8, ..SgdConfig::stage1() };
    let (e, h, _) = train_joint(&ds, &enc, &head, &cfg).unwrap();
    let correct = (0..ds.len())
        .filter(|&i| argmax(&h.score(&e.encode(&ds.row_f64(i)).unwrap()).unwrap()) == ds.labels()[i])
        .count();
    assert_eq!(correct, ds.len());
}

#[test]
fn head_training_on_identity_features_matches_joint_without_encoder() {
    let ds = toy(8);
    let id = EncoderParams::identity(6);
    let head = HeadParams::random(5, 6, HeadKind::Linear, 1.0, 3).unwrap();
    let cfg = SgdConfig { epochs: 3, ..SgdConfig::stage1() };
    let (_, joint_head, t1) = train_joint(&ds, &id, &head, &cfg).unwrap();
    let (only_head, t2) = train_head(&ds, &id, &head, &cfg).unwrap();
    assert_eq!(joint_head, only_head);
    assert_eq!(t1, t2);
}

#[test]
fn diverging_training_reports_the_step() {
    let ds = toy(9);
    let enc = EncoderParams::random(6, 8, 2).unwrap();
    let head = HeadParams::random(5, 8, HeadKind::Linear, 1.0, 3).unwrap();
    let cfg = SgdConfig { lr0: 1e6, schedule: Schedule::Constant, epochs: 20, ..SgdConfig::stage1() };
    let err = train_joint(&ds, &enc, &head, &cfg).unwrap_err();
    assert!(matches!(err, disalign::Error::NonFiniteLoss { .. }), "{err}");
}
