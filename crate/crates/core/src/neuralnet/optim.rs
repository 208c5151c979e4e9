use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer. Moment buffers are allocated lazily and matched to
/// parameters by position, so callers must always pass parameters in the same
/// order.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its gradient slot. Parameters
    /// without a gradient are left untouched.
    pub fn step<'a, I>(&mut self, params: I)
    where
        I: IntoIterator<Item = &'a mut Tensor<T>>,
    {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::of_f64(lr);
                for p in params {
                    if let Some(g) = &p.grad {
                        for (w, &gi) in p.data.iter_mut().zip(g) {
                            *w -= lr * gi;
                        }
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::of_f64(beta1), T::of_f64(beta2));
                let (one_b1, one_b2) = (T::of_f64(1.0 - beta1), T::of_f64(1.0 - beta2));
                // w -= lr·m̂/(√v̂ + ε) with m̂ = m/bc1, v̂ = v/bc2.
                let step_size = T::of_f64(lr / bc1);
                let inv_sqrt_bc2 = T::of_f64(1.0 / bc2.sqrt());
                let eps = T::of_f64(eps);
                for (i, p) in params.into_iter().enumerate() {
                    if i == self.m.len() {
                        self.m.push(vec![T::zero(); p.data.len()]);
                        self.v.push(vec![T::zero(); p.data.len()]);
                    }
                    let Some(g) = &p.grad else { continue };
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + one_b1 * gi;
                        *vi = b2 * *vi + one_b2 * gi * gi;
                        *w -= step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::new(vec![1], vec![w]).unwrap().with_grad();
        t.grad.as_mut().unwrap()[0] = g;
        t
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap().with_grad();
        let before = p.data.clone();
        Optimizer::new(OptimizerKind::Sgd, 0.3).step([&mut p]);
        assert_eq!(p.data, before);
    }

    #[test]
    fn sgd_unit_gradient_moves_by_lr() {
        let mut p = scalar(2.0, 1.0);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step([&mut p]);
        assert_eq!(p.data[0], 2.0 - 0.1);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut p = scalar(0.0, 3.7);
        Optimizer::new(OptimizerKind::adam(), 0.01).step([&mut p]);
        assert!((p.data[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut p = scalar(1.0, 0.0);
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1);
        for _ in 0..100 {
            let w = p.data[0];
            p.grad.as_mut().unwrap()[0] = 2.0 * w;
            opt.step([&mut p]);
        }
        assert!(p.data[0].abs() < 0.05, "w = {}", p.data[0]);
        assert_eq!(opt.steps_taken(), 100);
    }
}
