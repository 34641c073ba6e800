//! Helpers shared by the integration tests: an O(D^2) DFT, finite
//! differences and random instances.

#![allow(dead_code)]

use std::f64::consts::PI;

use freqkd::numerics::Complex64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct summation `X[k] = sum_n x[n] exp(-2 pi i k n / D)` for `k = 0..=D/2`.
pub fn naive_rdft(x: &[f64]) -> Vec<Complex64> {
    let d = x.len();
    (0..=d / 2)
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                    let angle = -2.0 * PI * (k * n % d) as f64 / d as f64;
                    acc + Complex64::new(v * angle.cos(), v * angle.sin())
                })
        })
        .collect()
}

/// Direct inverse from half-spectrum bins, `x[n] = (1/D) sum_k w_k Re(X[k] e^{2 pi i k n / D})`.
pub fn naive_irdft(bins: &[Complex64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|n| {
            let mut s = 0.0;
            for (k, b) in bins.iter().enumerate() {
                let angle = 2.0 * PI * (k * n % d) as f64 / d as f64;
                let w = if k == 0 || 2 * k == d { 1.0 } else { 2.0 };
                s += w * (b * Complex64::new(angle.cos(), angle.sin())).re;
            }
            s / d as f64
        })
        .collect()
}

/// Low band by masking the naive spectrum at `cutoff` and inverting directly.
pub fn naive_low_band(x: &[f64], cutoff: usize) -> Vec<f64> {
    let mut bins = naive_rdft(x);
    for b in bins.iter_mut().skip(cutoff) {
        *b = Complex64::new(0.0, 0.0);
    }
    naive_irdft(&bins, x.len())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn random_matrix(r: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| scale * r.random_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at every entry of `x`.
pub fn numeric_gradient(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, j]];
        probe[[i, j]] = orig + FD_STEP;
        let up = f(&probe);
        probe[[i, j]] = orig - FD_STEP;
        let down = f(&probe);
        probe[[i, j]] = orig;
        g[[i, j]] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

/// Central differences over a flat parameter slice.
pub fn numeric_gradient_flat(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}
