#![allow(dead_code)]

use disalign::linalg::Matrix;
use disalign::FrozenFeatures;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_frozen(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize, logit_scale: f64) -> FrozenFeatures {
    FrozenFeatures {
        features: Matrix::from_vec(n, d, gaussian(rng, n * d, 1.0)).unwrap(),
        logits: Matrix::from_vec(n, k, gaussian(rng, n * k, logit_scale)).unwrap(),
        labels: (0..n).map(|_| rng.random_range(0..k)).collect(),
        num_classes: k,
    }
}

/// Central differences of `f` around `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vectors vanish.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Reference alignment loss written out term by term: the re-weighted
/// one-hot reference distribution against a plainly computed softmax of the
/// calibrated logits, without any shared code from the library.
pub fn naive_alignment_loss(
    frozen: &FrozenFeatures,
    indices: &[usize],
    alpha: &[f64],
    beta: &[f64],
    v: &[f64],
    b: f64,
    class_weights: &[f64],
) -> f64 {
    let k = frozen.num_classes;
    let mut total = 0.0;
    for &i in indices {
        let x = frozen.features.row(i);
        let z = frozen.logits.row(i);
        let y = frozen.labels[i];
        let t: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        let sigma = 1.0 / (1.0 + (-t).exp());
        let zc: Vec<f64> = (0..k).map(|j| (1.0 + sigma * alpha[j]) * z[j] + sigma * beta[j]).collect();
        let denom: f64 = zc.iter().map(|v| v.exp()).sum();
        for c in 0..k {
            let p_ref = if c == y { class_weights[c] } else { 0.0 };
            let p_model = zc[c].exp() / denom;
            total -= p_ref * p_model.ln();
        }
    }
    total / indices.len() as f64
}
