//! Synthetic paired-modality benchmark.
//!
//! Each sample draws a semantic code `z = prototype[label] + semantic_noise * eta`
//! shared by both modalities. A modality's input spectrum carries a projection
//! of `z` in its low bins (shared matrix plus a small per-modality
//! perturbation) and a modality-specific class pattern plus noise in its high
//! bins. After the inverse transform each modality is affinely distorted,
//! `x <- scale * x + offset`, which gives the two modalities different feature
//! scales and means.
//!
//! Spectral coefficients are expressed in an orthonormal real basis, so the
//! squared norm of an input equals the summed squared coefficients before the
//! affine distortion.

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Dataset, Modality, PairedSample};
use crate::frequency::BandSplit;
use crate::kv;
use crate::numerics::{RealDft, SeededRng, Spectrum};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub input_dim: usize,
    pub semantic_dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub semantic_noise: f64,
    /// Size of the per-modality deviation from the shared low-band projection.
    pub low_perturbation: f64,
    /// Per-sample, per-modality noise in the low bins.
    pub low_noise: f64,
    pub high_signal: f64,
    pub high_noise: f64,
    pub scale_a: f64,
    pub offset_a: f64,
    pub scale_b: f64,
    pub offset_b: f64,
    /// Band split that decides which input bins count as low.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            input_dim: 64,
            semantic_dim: 16,
            train_size: 2000,
            test_size: 500,
            semantic_noise: 4.0,
            low_perturbation: 0.1,
            low_noise: 0.5,
            high_signal: 0.2,
            high_noise: 0.3,
            scale_a: 1.6,
            offset_a: 0.4,
            scale_b: 1.0,
            offset_b: 0.0,
            threshold: 0.5,
            seed: 0,
        }
    }
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(
            classes,
            input_dim,
            semantic_dim,
            train_size,
            test_size,
            semantic_noise,
            low_perturbation,
            low_noise,
            high_signal,
            high_noise,
            scale_a,
            offset_a,
            scale_b,
            offset_b,
            threshold,
            seed
        )
    };
}

impl SyntheticConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_dim < 4 || !self.input_dim.is_multiple_of(2) {
            return bad(format!(
                "input_dim must be even and >= 4, got {}",
                self.input_dim
            ));
        }
        let split = BandSplit::new(self.threshold, self.input_dim)?;
        if self.semantic_dim == 0 || self.semantic_dim > split.cutoff() {
            return bad(format!(
                "semantic_dim {} must lie in 1..={} (low-band bins at threshold {})",
                self.semantic_dim,
                split.cutoff(),
                self.threshold
            ));
        }
        if self.train_size < self.classes || self.test_size < self.classes {
            return bad(format!(
                "train/test sizes ({}, {}) must be at least the class count {}",
                self.train_size, self.test_size, self.classes
            ));
        }
        for (name, v) in [
            ("semantic_noise", self.semantic_noise),
            ("low_perturbation", self.low_perturbation),
            ("low_noise", self.low_noise),
            ("high_signal", self.high_signal),
            ("high_noise", self.high_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("scale_a", self.scale_a),
            ("offset_a", self.offset_a),
            ("scale_b", self.scale_b),
            ("offset_b", self.offset_b),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> kv::Pairs {
        let mut out = Vec::new();
        macro_rules! push {
            ($($f:ident),*) => { $( out.push((stringify!($f).to_string(), self.$f.to_string())); )* };
        }
        config_fields!(push);
        out
    }

    /// Reads every key that is present; missing keys keep their defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! pull {
            ($($f:ident),*) => { $( if let Some(v) = kv::parse_value(pairs, stringify!($f))? { c.$f = v; } )* };
        }
        config_fields!(pull);
        Ok(c)
    }

    fn affine(&self, m: Modality) -> (f64, f64) {
        match m {
            Modality::A => (self.scale_a, self.offset_a),
            Modality::B => (self.scale_b, self.offset_b),
        }
    }
}

fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-variance complex normal (each part has variance 1/2).
fn complex_normal(rng: &mut SeededRng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(s * normal(rng), s * normal(rng))
}

struct Generator {
    cfg: SyntheticConfig,
    dft: RealDft,
    cutoff: usize,
    prototypes: Vec<Vec<f64>>,
    /// `[modality][bin][semantic]`, low bins only.
    projection: [Vec<Vec<Complex64>>; 2],
    /// `[modality][class][bin]`, high bins only (offset by `cutoff`).
    patterns: [Vec<Vec<Complex64>>; 2],
}

impl Generator {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let root = SeededRng::new(cfg.seed);
        let split = BandSplit::new(cfg.threshold, cfg.input_dim)?;
        let cutoff = split.cutoff();
        let bins = split.bins();
        let s = cfg.semantic_dim;
        let norm = 1.0 / (s as f64).sqrt();

        let prototypes = (0..cfg.classes)
            .map(|c| {
                let mut r = root.split("prototype", c as u64);
                (0..s).map(|_| normal(&mut r)).collect()
            })
            .collect();

        let mut r = root.split("projection", 0);
        let shared: Vec<Vec<Complex64>> = (0..cutoff)
            .map(|_| (0..s).map(|_| complex_normal(&mut r) * norm).collect())
            .collect();
        let projection = Modality::ALL.map(|m| {
            let mut r = root.split("perturbation", m.index());
            shared
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|p| p + complex_normal(&mut r) * (norm * cfg.low_perturbation))
                        .collect()
                })
                .collect()
        });
        let mut patterns: [Vec<Vec<Complex64>>; 2] = Modality::ALL.map(|m| {
            (0..cfg.classes)
                .map(|c| {
                    let mut r = root.split("pattern", m.index() * cfg.classes as u64 + c as u64);
                    let mut p: Vec<Complex64> =
                        (cutoff..bins).map(|_| complex_normal(&mut r)).collect();
                    if let Some(last) = p.last_mut() {
                        last.im = 0.0; // Nyquist is real
                    }
                    p
                })
                .collect()
        });
        // Remove chance alignment between the two modalities' signals for the
        // same class, so paired high bands carry no shared component.
        let [ref pa, ref mut pb] = patterns;
        for (a, b) in pa.iter().zip(pb.iter_mut()) {
            let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum();
            let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            if norm > 0.0 {
                let k = dot / norm;
                for (x, y) in a.iter().zip(b.iter_mut()) {
                    *y -= x * k;
                }
            }
        }

        Ok(Self {
            cfg: cfg.clone(),
            dft: RealDft::new(cfg.input_dim)?,
            cutoff,
            prototypes,
            projection,
            patterns,
        })
    }

    fn sample(&self, index: u64, label: usize) -> Result<PairedSample> {
        let cfg = &self.cfg;
        let mut rng = SeededRng::new(cfg.seed).split("sample", index);
        let z: Vec<f64> = self.prototypes[label]
            .iter()
            .map(|p| p + cfg.semantic_noise * normal(&mut rng))
            .collect();
        let mut xs = Vec::with_capacity(2);
        for m in Modality::ALL {
            let mut coef = Vec::with_capacity(self.dft.bins());
            for row in &self.projection[m.index() as usize] {
                let shared: Complex64 = row.iter().zip(&z).map(|(p, zj)| p * zj).sum();
                coef.push(shared + complex_normal(&mut rng) * cfg.low_noise);
            }
            for pattern in &self.patterns[m.index() as usize][label] {
                coef.push(pattern * cfg.high_signal + complex_normal(&mut rng) * cfg.high_noise);
            }
            let x = self.synthesize(&coef)?;
            let (scale, offset) = cfg.affine(m);
            xs.push(
                x.into_iter()
                    .map(|v| scale * v + offset)
                    .collect::<Vec<f64>>(),
            );
        }
        let x_b = xs.pop().expect("two modalities");
        let x_a = xs.pop().expect("two modalities");
        Ok(PairedSample {
            id: index,
            label,
            x_a,
            x_b,
        })
    }

    /// Maps orthonormal-basis coefficients to a real vector. DC and Nyquist
    /// keep only their real part.
    fn synthesize(&self, coef: &[Complex64]) -> Result<Vec<f64>> {
        let d = self.cfg.input_dim as f64;
        let last = coef.len() - 1;
        let bins = coef
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k == 0 || k == last {
                    Complex64::new(c.re * d.sqrt(), 0.0)
                } else {
                    c * (d / 2.0).sqrt()
                }
            })
            .collect();
        debug_assert!(self.cutoff >= 1);
        self.dft.inverse(&Spectrum {
            bins,
            source_dim: self.cfg.input_dim,
        })
    }
}

/// Generates the train and test splits. Sample `i` (test samples continue the
/// train numbering) has label `i mod classes` and its own RNG stream, so the
/// output does not depend on generation order.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    let g = Generator::new(config)?;
    let make = |range: std::ops::Range<usize>| -> Result<Vec<PairedSample>> {
        range
            .map(|i| g.sample(i as u64, i % config.classes))
            .collect()
    };
    let train = make(0..config.train_size)?;
    let test = make(config.train_size..config.train_size + config.test_size)?;
    Ok(Dataset {
        classes: config.classes,
        input_dim: config.input_dim,
        train,
        test,
        provenance: Some(config.clone()),
    })
}
