//! Low/high band decomposition of feature vectors and feature standardization.
//!
//! A [`BandSplit`] partitions the `K = D/2 + 1` bins of a real spectrum at a
//! cutoff `c = max(1, floor(K * threshold))`: bins `[0, c)` form the low band
//! (DC included) and bins `[c, K)` the high band. Each band is reconstructed
//! with the inverse transform, so `low + high` recovers the input.
//!
//! Both band maps are orthogonal projectors in feature space. They are
//! therefore symmetric, and the gradient of anything computed from a band is
//! obtained by decomposing the incoming gradient with the same split.

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex64;

use crate::numerics::{self, RealDft, NORM_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSplit {
    threshold: f64,
    cutoff: usize,
    bins: usize,
}

impl BandSplit {
    /// Split for vectors of dimension `dim` at a fractional `threshold` in (0, 1).
    pub fn new(threshold: f64, dim: usize) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!(
                "band threshold must lie in (0, 1), got {threshold}"
            )));
        }
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "band split needs an even dimension of at least 2, got {dim}"
            )));
        }
        let bins = dim / 2 + 1;
        let cutoff = ((bins as f64 * threshold).floor() as usize).clamp(1, bins - 1);
        Ok(Self {
            threshold,
            cutoff,
            bins,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// First bin of the high band.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Spectrum length `K`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        2 * (self.bins - 1)
    }

    pub fn is_low(&self, bin: usize) -> bool {
        bin < self.cutoff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBands {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// A [`BandSplit`] bundled with a planned transform of matching size.
#[derive(Debug, Clone)]
pub struct BandDecomposer {
    dft: RealDft,
    split: BandSplit,
}

impl BandDecomposer {
    pub fn new(split: BandSplit) -> Result<Self> {
        Ok(Self {
            dft: RealDft::new(split.dim())?,
            split,
        })
    }

    pub fn split(&self) -> &BandSplit {
        &self.split
    }

    pub fn decompose(&self, x: &[f64]) -> Result<FrequencyBands> {
        if x.len() / 2 + 1 != self.split.bins || !x.len().is_multiple_of(2) {
            return Err(Error::dim(format!(
                "split over {} bins applied to a vector of dimension {}",
                self.split.bins,
                x.len()
            )));
        }
        let spectrum = self.dft.forward(x)?;
        let zero = Complex64::new(0.0, 0.0);
        let mut low = spectrum.clone();
        let mut high = spectrum;
        for k in 0..self.split.bins {
            if self.split.is_low(k) {
                high.bins[k] = zero;
            } else {
                low.bins[k] = zero;
            }
        }
        Ok(FrequencyBands {
            low: self.dft.inverse(&low)?,
            high: self.dft.inverse(&high)?,
        })
    }

    /// Row-wise decomposition of an `N x D` batch into `(low, high)`.
    pub fn decompose_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (n, d) = x.dim();
        let mut low = Array2::zeros((n, d));
        let mut high = Array2::zeros((n, d));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let row = row.to_vec();
            let bands = self.decompose(&row)?;
            low.row_mut(i)
                .assign(&ndarray::ArrayView1::from(&bands.low));
            high.row_mut(i)
                .assign(&ndarray::ArrayView1::from(&bands.high));
        }
        Ok((low, high))
    }

    /// Gradient with respect to the input of a batch decomposition, given the
    /// gradients flowing into the low and high outputs.
    pub fn backward_rows(
        &self,
        grad_low: Option<ArrayView2<f64>>,
        grad_high: Option<ArrayView2<f64>>,
    ) -> Result<Option<Array2<f64>>> {
        let mut out: Option<Array2<f64>> = None;
        if let Some(g) = grad_low {
            out = Some(self.decompose_rows(g)?.0);
        }
        if let Some(g) = grad_high {
            let high = self.decompose_rows(g)?.1;
            out = Some(match out {
                Some(low) => low + high,
                None => high,
            });
        }
        Ok(out)
    }
}

pub fn decompose(x: &[f64], split: &BandSplit) -> Result<FrequencyBands> {
    BandDecomposer::new(*split)?.decompose(x)
}

/// Output of a normalization, with the norm it divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub norm: f64,
    pub degenerate: bool,
}

/// `(x - mean(x)) / ||x - mean(x)||_2`. Constant inputs map to the zero vector
/// with `degenerate` set.
pub fn standardize(x: &[f64]) -> Result<Standardized> {
    if x.len() < 2 {
        return Err(Error::dim(format!(
            "standardization needs at least 2 entries, got {}",
            x.len()
        )));
    }
    let m = numerics::mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    Ok(scale_to_unit(centered))
}

/// `x / ||x||_2`, zero vector and `degenerate` for numerically zero input.
pub fn l2_normalize(x: &[f64]) -> Standardized {
    scale_to_unit(x.to_vec())
}

fn scale_to_unit(mut v: Vec<f64>) -> Standardized {
    let norm = numerics::l2_norm(&v);
    if norm < NORM_EPS {
        v.iter_mut().for_each(|e| *e = 0.0);
        return Standardized {
            values: v,
            norm,
            degenerate: true,
        };
    }
    v.iter_mut().for_each(|e| *e /= norm);
    Standardized {
        values: v,
        norm,
        degenerate: false,
    }
}

/// Mean removal performed in the frequency domain by zeroing the DC bin.
pub fn dc_filter(x: &[f64]) -> Result<Vec<f64>> {
    let dft = RealDft::new(x.len())?;
    let mut s = dft.forward(x)?;
    s.bins[0] = Complex64::new(0.0, 0.0);
    dft.inverse(&s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedBands {
    pub low: Standardized,
    pub high: Standardized,
}

/// Standardizes both bands. The high band has no DC content, so for it the
/// standardization reduces to L2 normalization.
pub fn standardize_bands(b: &FrequencyBands) -> Result<StandardizedBands> {
    if b.low.len() != b.high.len() {
        return Err(Error::dim(format!(
            "bands of unequal length {} and {}",
            b.low.len(),
            b.high.len()
        )));
    }
    Ok(StandardizedBands {
        low: standardize(&b.low)?,
        high: l2_normalize(&b.high),
    })
}

/// Which per-row normalization to apply to a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowNorm {
    /// Mean removal followed by L2 normalization.
    Standardize,
    /// L2 normalization only.
    L2,
}

/// Row-wise normalized batch, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    kind: RowNorm,
    pub values: Array2<f64>,
    norms: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl NormalizedRows {
    pub fn forward(x: ArrayView2<f64>, kind: RowNorm) -> Result<Self> {
        let (n, d) = x.dim();
        let mut values = Array2::zeros((n, d));
        let mut norms = Vec::with_capacity(n);
        let mut degenerate = Vec::with_capacity(n);
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let row = row.to_vec();
            let s = match kind {
                RowNorm::Standardize => standardize(&row)?,
                RowNorm::L2 => l2_normalize(&row),
            };
            values
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&s.values));
            norms.push(s.norm);
            degenerate.push(s.degenerate);
        }
        Ok(Self {
            kind,
            values,
            norms,
            degenerate,
        })
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    /// Vector-Jacobian product. For `y = c / ||c||` the gradient with respect
    /// to `c` is `(g - y (y . g)) / ||c||`; centering then subtracts its mean.
    /// Degenerate rows pass no gradient.
    pub fn backward(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(grad.dim());
        for (i, g) in grad.axis_iter(Axis(0)).enumerate() {
            if self.degenerate[i] {
                continue;
            }
            let y = self.values.row(i);
            let yg = y.dot(&g);
            let mut row = out.row_mut(i);
            for j in 0..g.len() {
                row[j] = (g[j] - y[j] * yg) / self.norms[i];
            }
            if self.kind == RowNorm::Standardize {
                let m = row.sum() / row.len() as f64;
                row.mapv_inplace(|v| v - m);
            }
        }
        out
    }
}
