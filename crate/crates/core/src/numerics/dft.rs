//! Real-input discrete Fourier transform.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = sum_n x[n] exp(-2 pi i k n / D)` for `k = 0..=D/2`, and the inverse
//! carries the `1/D` factor. Only the `D/2 + 1` non-redundant bins are stored;
//! the remaining ones are implied by conjugate symmetry, which is what keeps
//! masked reconstructions real.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Non-redundant half spectrum of a real vector of even length `source_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub source_dim: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Planned forward/inverse transform pair for one dimension.
#[derive(Clone)]
pub struct RealDft {
    dim: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealDft").field("dim", &self.dim).finish()
    }
}

impl RealDft {
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim,
            forward: planner.plan_fft_forward(dim),
            inverse: planner.plan_fft_inverse(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored bins, `D/2 + 1`.
    pub fn bins(&self) -> usize {
        self.dim / 2 + 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrum> {
        if x.len() != self.dim {
            return Err(Error::dim(format!(
                "transform planned for dimension {} got {}",
                self.dim,
                x.len()
            )));
        }
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.truncate(self.bins());
        buf[0].im = 0.0;
        let last = buf.len() - 1;
        buf[last].im = 0.0;
        Ok(Spectrum {
            bins: buf,
            source_dim: self.dim,
        })
    }

    pub fn inverse(&self, s: &Spectrum) -> Result<Vec<f64>> {
        if s.source_dim != self.dim || s.bins.len() != self.bins() {
            return Err(Error::dim(format!(
                "spectrum with {} bins for dimension {} does not match transform of dimension {}",
                s.bins.len(),
                s.source_dim,
                self.dim
            )));
        }
        check_symmetry(s)?;
        let d = self.dim;
        let half = d / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        buf[0] = Complex64::new(s.bins[0].re, 0.0);
        buf[half] = Complex64::new(s.bins[half].re, 0.0);
        for k in 1..half {
            buf[k] = s.bins[k];
            buf[d - k] = s.bins[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / d as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }
}

pub fn rdft(x: &[f64]) -> Result<Spectrum> {
    RealDft::new(x.len())?.forward(x)
}

pub fn irdft(s: &Spectrum) -> Result<Vec<f64>> {
    check_dim(s.source_dim)?;
    RealDft::new(s.source_dim)?.inverse(s)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::dim(format!(
            "transform dimension must be even and at least 2, got {dim}"
        )));
    }
    Ok(())
}

fn check_symmetry(s: &Spectrum) -> Result<()> {
    let scale = s.bins.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let last = s.bins.len() - 1;
    for k in [0, last] {
        if s.bins[k].im.abs() > 1e-9 * scale {
            return Err(Error::Spectrum(format!(
                "bin {k} of a real-input spectrum must be real, imaginary part is {}",
                s.bins[k].im
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    // direct O(D^2) summation, independent of the planned transform
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let d = x.len();
        (0..=d / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .fold(Complex64::new(0.0, 0.0), |acc, (n, &v)| {
                        let angle = -2.0 * std::f64::consts::PI * ((k * n) % d) as f64 / d as f64;
                        acc + Complex64::new(v * angle.cos(), v * angle.sin())
                    })
            })
            .collect()
    }

    fn random(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..d).map(|_| rng.symmetric(1.0)).collect()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let s = rdft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.len(), 3);
        for b in &s.bins {
            assert!((b - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_is_pure_dc() {
        let s = rdft(&[2.5; 4]).unwrap();
        assert!((s.bins[0] - c(10.0, 0.0)).norm() < 1e-14);
        assert!(s.bins[1].norm() < 1e-14);
        assert!(s.bins[2].norm() < 1e-14);
    }

    #[test]
    fn inverse_examples() {
        let x = irdft(&Spectrum {
            bins: vec![c(4.0 * 1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            source_dim: 4,
        })
        .unwrap();
        for v in x {
            assert!((v - 1.5).abs() < 1e-15);
        }
        let x = irdft(&Spectrum {
            bins: vec![c(0.0, 0.0), c(0.0, 0.0), c(4.0, 0.0)],
            source_dim: 4,
        })
        .unwrap();
        for (v, e) in x.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_summation() {
        let x = random(64, 3);
        let fast = rdft(&x).unwrap();
        let slow = naive_dft(&x);
        for (a, b) in fast.bins.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn round_trip_d64() {
        let x = random(64, 9);
        let back = irdft(&rdft(&x).unwrap()).unwrap();
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn rejects_odd_and_degenerate_dims() {
        assert!(matches!(rdft(&[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
        assert!(matches!(rdft(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(rdft(&[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_asymmetric_spectrum() {
        let s = Spectrum {
            bins: vec![c(1.0, 0.5), c(0.0, 0.0), c(0.0, 0.0)],
            source_dim: 4,
        };
        assert!(matches!(irdft(&s), Err(Error::Spectrum(_))));
        let s = Spectrum {
            bins: vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, -2.0)],
            source_dim: 4,
        };
        assert!(matches!(irdft(&s), Err(Error::Spectrum(_))));
    }

    #[test]
    fn rejects_bin_count_mismatch() {
        let s = Spectrum {
            bins: vec![c(1.0, 0.0), c(0.0, 0.0)],
            source_dim: 4,
        };
        assert!(matches!(irdft(&s), Err(Error::Dimension(_))));
    }
}
