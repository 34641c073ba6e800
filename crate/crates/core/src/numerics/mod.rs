//! Deterministic numerical kernels shared by the rest of the crate.

mod dft;
mod rng;

pub use dft::{irdft, rdft, RealDft, Spectrum};
pub use rng::SeededRng;

pub use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// Norm below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Cosine similarity together with a flag telling whether either input was
/// numerically zero (in which case the value is reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na < NORM_EPS || nb < NORM_EPS {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot(a, b) / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}
