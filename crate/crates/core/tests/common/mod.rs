#![allow(dead_code)]

use momnet::rng::SplitMix64;

pub mod oracles;
use momnet::Tensor;

pub fn randn(shape: &[usize], scale: f64, rng: &mut SplitMix64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.normal())
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `|a - b|_inf / max(|a|_inf, |b|_inf)`; the plain difference when both are zero.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub const H: f64 = 1e-5;

/// Central difference of `loss` along coordinate `i` of `theta`.
pub fn central(theta: &mut [f64], i: usize, h: f64, loss: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = theta[i];
    theta[i] = orig + h;
    let lp = loss(theta);
    theta[i] = orig - h;
    let lm = loss(theta);
    theta[i] = orig;
    (lp - lm) / (2.0 * h)
}

/// Central differences for every coordinate, skipping coordinates where a
/// ReLU or max-pool kink sits inside the stencil.
///
/// A ReLU/max-pool network is piecewise linear in any single coordinate, so
/// away from kinks the one-sided slopes on `[-h, 0]` and `[0, h]` agree to
/// rounding error. When they do not, the stencil straddles (or starts on) a
/// kink and the coordinate is dropped. Returns `None` for dropped coordinates.
pub fn guarded_fd(theta: &[f64], loss: &mut dyn FnMut(&[f64]) -> f64) -> Vec<Option<f64>> {
    let mut t = theta.to_vec();
    let base = loss(&t);
    (0..t.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + H;
            let lp = loss(&t);
            t[i] = orig - H;
            let lm = loss(&t);
            t[i] = orig;
            let (right, left) = ((lp - base) / H, (base - lm) / H);
            let centre = (lp - lm) / (2.0 * H);
            ((right - left).abs() <= 1e-6 * (1.0 + centre.abs())).then_some(centre)
        })
        .collect()
}

/// (relative error over kept coordinates, number of dropped coordinates).
pub fn compare_guarded(analytic: &[f64], numeric: &[Option<f64>]) -> (f64, usize) {
    let (mut a, mut n, mut dropped) = (Vec::new(), Vec::new(), 0);
    for (x, y) in analytic.iter().zip(numeric) {
        match y {
            Some(y) => {
                a.push(*x);
                n.push(*y);
            }
            None => dropped += 1,
        }
    }
    (rel_err(&a, &n), dropped)
}
