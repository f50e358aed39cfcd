//! Adam with bias-corrected moment estimates.

use super::tensor::Tensor;
use super::{AdError, AdResult};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for a fixed list of parameter tensors.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(shapes: &[[usize; 2]], hyper: AdamHyper) -> Self {
        let m = shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
        let v = shapes.iter().map(|s| Tensor::zeros(s[0], s[1])).collect();
        AdamState { m, v, step: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `grads` must align with the shapes
    /// the state was created with; a non-finite gradient aborts before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> AdResult<()> {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient count mismatch");
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(AdError::ShapeMismatch {
                    op: "adam_step",
                    lhs: params[i].shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(AdError::NonFiniteGrad { index: i, name: format!("param{i}") });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        for i in 0..grads.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            let g = grads[i].data();
            for j in 0..g.len() {
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= h.lr * mh / (vh.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::from_vec(1, 2, vec![1.5, -0.5]);
        let mut st = AdamState::new(&[p.shape()], AdamHyper::with_lr(0.1));
        st.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data(), &[1.5, -0.5]);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With bias correction the first step is lr * g/|g| up to eps.
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[p.shape()], AdamHyper::with_lr(0.01));
        st.step(&mut [&mut p], &[Tensor::scalar(3.0)]).unwrap();
        assert!((p.item() + 0.01).abs() < 1e-6, "step was {}", p.item());
    }

    #[test]
    fn quadratic_bowl_converges() {
        // min x^2 from x0 = 2; 5000 steps at lr 1e-2 lands well inside 1e-3.
        let mut x = Tensor::scalar(2.0);
        let mut st = AdamState::new(&[x.shape()], AdamHyper::with_lr(1e-2));
        for _ in 0..5000 {
            let g = Tensor::scalar(2.0 * x.item());
            st.step(&mut [&mut x], &[g]).unwrap();
        }
        assert!(x.item().abs() < 1e-3, "ended at {}", x.item());
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_index() {
        let mut a = Tensor::scalar(0.0);
        let mut b = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[a.shape(), b.shape()], AdamHyper::with_lr(0.1));
        let err = st
            .step(&mut [&mut a, &mut b], &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert!(matches!(err, AdError::NonFiniteGrad { index: 1, .. }));
        // Nothing was applied.
        assert_eq!(a.item(), 0.0);
    }
}
