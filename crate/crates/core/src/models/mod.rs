//! Encoders, classification heads, the optimizer and checkpoint files.

mod checkpoint;
mod encoder;
mod linear;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{EncoderPass, EncoderShape, MlpEncoder};
pub use linear::Linear;
pub use optim::Sgd;

use ndarray::{ArrayView2, Axis};

use crate::data::Modality;
use crate::numerics::SeededRng;
use crate::Result;

/// One modality's network: encoder plus the private head used for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub modality: Modality,
    pub encoder: MlpEncoder,
    pub head: Linear,
}

impl ModelBundle {
    /// Encoder weights come from the `("encoder", modality)` stream and the
    /// head from `("head", modality)`, both split off `seed`.
    pub fn init(
        modality: Modality,
        shape: &EncoderShape,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let root = SeededRng::new(seed);
        let encoder = MlpEncoder::init(shape, &mut root.split("encoder", modality.index()))?;
        let head = Linear::init(
            shape.feature_dim,
            classes,
            &mut root.split("head", modality.index()),
        );
        Ok(Self {
            modality,
            encoder,
            head,
        })
    }

    pub fn classes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }

    pub fn features(&self, x: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
        Ok(self.encoder.forward(x)?.features)
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
        let f = self.features(x)?;
        self.head.forward(f.view())
    }

    /// Predicted class per row; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.logits(x)?.view()))
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn parameter_hash(&self) -> u64 {
        hash_tensors(&self.tensors())
    }
}

/// Classifiers applied to the low and high band features of both modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedClassifiers {
    pub low: Linear,
    pub high: Linear,
}

impl SharedClassifiers {
    pub fn init(feature_dim: usize, classes: usize, seed: u64) -> Self {
        let root = SeededRng::new(seed);
        Self {
            low: Linear::init(feature_dim, classes, &mut root.split("shared", 0)),
            high: Linear::init(feature_dim, classes, &mut root.split("shared", 1)),
        }
    }

    pub fn zeros(feature_dim: usize, classes: usize) -> Self {
        Self {
            low: Linear::zeros(feature_dim, classes),
            high: Linear::zeros(feature_dim, classes),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.low
            .tensors()
            .into_iter()
            .chain(self.high.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let SharedClassifiers { low, high } = self;
        low.tensors_mut()
            .into_iter()
            .chain(high.tensors_mut())
            .collect()
    }
}

pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn hash_tensors(tensors: &[&[f64]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for v in *t {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
