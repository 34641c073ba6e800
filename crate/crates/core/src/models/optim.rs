use crate::{Error, Result};

/// SGD with heavy-ball momentum and a polynomial ("poly") learning-rate decay.
///
/// Per step: `v <- momentum * v + g`, `p <- p - lr(t) * v`, with
/// `lr(t) = base_lr * (1 - t / max_steps)^power`, clamped at zero past the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub base_lr: f64,
    pub momentum: f64,
    pub power: f64,
    pub max_steps: u64,
    step: u64,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(base_lr: f64, momentum: f64, power: f64, max_steps: u64) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {base_lr}"
            )));
        }
        if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::Config(format!(
                "poly power must be >= 0, got {power}"
            )));
        }
        Ok(Self {
            base_lr,
            momentum,
            power,
            max_steps,
            step: 0,
            buffers: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        if self.max_steps == 0 || t >= self.max_steps {
            return 0.0;
        }
        self.base_lr * (1.0 - t as f64 / self.max_steps as f64).powf(self.power)
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim(format!(
                    "tensor {i}: parameter length {} but gradient length {}",
                    p.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    term: format!("gradient of tensor {i}"),
                    location: Some(format!("step {}", self.step)),
                });
            }
        }
        if self.buffers.is_empty() {
            self.buffers = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        } else if self.buffers.len() != grads.len()
            || self
                .buffers
                .iter()
                .zip(&grads)
                .any(|(b, g)| b.len() != g.len())
        {
            return Err(Error::dim("gradient shapes changed between steps"));
        }

        let lr = self.current_lr();
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut opt = Sgd::new(0.5, 0.0, 0.9, 10).unwrap();
        let mut p = vec![1.0, 2.0];
        opt.step(vec![&mut p], vec![&[0.2, -0.4]]).unwrap();
        assert_eq!(p, vec![1.0 - 0.5 * 0.2, 2.0 + 0.5 * 0.4]);
    }

    #[test]
    fn poly_endpoints_and_monotonicity() {
        let opt = Sgd::new(0.01, 0.9, 0.9, 100).unwrap();
        assert_eq!(opt.lr_at(0), 0.01);
        assert_eq!(opt.lr_at(100), 0.0);
        assert_eq!(opt.lr_at(250), 0.0);
        for t in 0..100 {
            assert!(opt.lr_at(t + 1) <= opt.lr_at(t));
        }
    }

    #[test]
    fn two_momentum_steps() {
        // power 0 keeps the rate fixed at 0.1
        let mut opt = Sgd::new(0.1, 0.9, 0.0, 100).unwrap();
        let mut p = vec![0.0];
        opt.step(vec![&mut p], vec![&[1.0]]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        opt.step(vec![&mut p], vec![&[1.0]]).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_the_step() {
        let mut opt = Sgd::new(0.1, 0.9, 0.9, 10).unwrap();
        let mut a = vec![1.0];
        let mut b = vec![2.0];
        let err = opt
            .step(vec![&mut a, &mut b], vec![&[0.5], &[f64::NAN]])
            .unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!((a[0], b[0]), (1.0, 2.0));
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(Sgd::new(-1.0, 0.9, 0.9, 1).is_err());
        assert!(Sgd::new(0.1, 1.0, 0.9, 1).is_err());
        assert!(Sgd::new(0.1, 0.9, f64::NAN, 1).is_err());
    }
}
