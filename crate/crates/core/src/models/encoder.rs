use ndarray::{Array2, ArrayView2};

use super::Linear;
use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Layer widths of an encoder and whether the input is added to its output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub residual: bool,
}

impl EncoderShape {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.feature_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::Config(format!(
                "encoder widths must be positive: {:?}",
                self.widths()
            )));
        }
        if self.residual && self.input_dim != self.feature_dim {
            return Err(Error::Config(format!(
                "residual encoder needs input width == feature width, got {} and {}",
                self.input_dim, self.feature_dim
            )));
        }
        Ok(())
    }
}

/// Rectified MLP whose final layer is left linear: its output is the
/// pre-activation feature that gets distilled. With `residual` set the input
/// is added to that output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub layers: Vec<Linear>,
    pub residual: bool,
}

/// Activations cached by [`MlpEncoder::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    /// Input of every layer (post-rectifier for all but the first).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Array2<f64>>,
    pub features: Array2<f64>,
}

impl MlpEncoder {
    pub fn init(shape: &EncoderShape, rng: &mut SeededRng) -> Result<Self> {
        shape.validate()?;
        let widths = shape.widths();
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            residual: shape.residual,
        })
    }

    pub fn zeros(shape: &EncoderShape) -> Result<Self> {
        shape.validate()?;
        let layers = shape
            .widths()
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layers,
            residual: shape.residual,
        })
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(Linear::output_dim)
                .collect(),
            feature_dim: self.feature_dim(),
            residual: self.residual,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<EncoderPass> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "encoder expects input width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut current = x.to_owned();
        for layer in &self.layers[..last] {
            let pre = layer.forward(current.view())?;
            let act = pre.mapv(|v| v.max(0.0));
            inputs.push(current);
            hidden_pre.push(pre);
            current = act;
        }
        let mut features = self.layers[last].forward(current.view())?;
        inputs.push(current);
        if self.residual {
            features += &x;
        }
        Ok(EncoderPass {
            inputs,
            hidden_pre,
            features,
        })
    }

    /// Parameter gradients for upstream feature gradient `d_features`.
    pub fn backward(&self, pass: &EncoderPass, d_features: ArrayView2<f64>) -> MlpEncoder {
        let mut grads: Vec<Linear> = Vec::with_capacity(self.layers.len());
        let mut upstream = d_features.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (g, mut dx) = layer.backward(pass.inputs[idx].view(), upstream.view());
            grads.push(g);
            if idx > 0 {
                let pre = &pass.hidden_pre[idx - 1];
                ndarray::Zip::from(&mut dx).and(pre).for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            upstream = dx;
        }
        grads.reverse();
        MlpEncoder {
            layers: grads,
            residual: self.residual,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }
}
