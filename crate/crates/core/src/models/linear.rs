use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::numerics::SeededRng;
use crate::{Error, Result};

/// Affine map `y = x W + b` applied to row batches. Gradients are stored in
/// the same type, so a zeroed `Linear` doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Fan-in scaled uniform init: every weight, then every bias, drawn in
    /// row-major order from `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((input, output), || rng.symmetric(bound));
        let bias = Array1::from_shape_simple_fn(output, || rng.symmetric(bound));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "linear layer expects width {}, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }

    /// Parameter gradient and input gradient for upstream gradient `dy`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> (Linear, Array2<f64>) {
        let grad = Linear {
            weight: x.t().dot(&dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight.t()))
    }

    pub fn accumulate(&mut self, other: &Linear) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn shapes(&self) -> [(usize, usize); 2] {
        [
            (self.input_dim(), self.output_dim()),
            (1, self.output_dim()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_is_affine() {
        let l = Linear {
            weight: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            bias: array![0.5, -0.5],
        };
        let y = l.forward(array![[1.0, 0.0, -1.0]].view()).unwrap();
        assert_eq!(y, array![[-3.5, -4.5]]);
        assert!(l.forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn init_is_bounded_and_reproducible() {
        let a = Linear::init(16, 4, &mut SeededRng::new(3));
        let b = Linear::init(16, 4, &mut SeededRng::new(3));
        assert_eq!(a, b);
        assert!(a
            .weight
            .iter()
            .chain(a.bias.iter())
            .all(|w| w.abs() <= 0.25));
    }
}
