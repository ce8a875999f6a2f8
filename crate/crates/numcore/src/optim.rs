use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Alias kept for call sites that read better with the optimizer's name.
pub type Adam = OptimState;

impl OptimState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter from its `grad` (absent
    /// gradients count as zero) and leaves the gradients in place.
    pub fn adam_step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return dim_err(
                "adam_step",
                format!("state tracks {} parameters, got {}", self.m.len(), params.len()),
            );
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return dim_err(
                    "adam_step",
                    format!("parameter {i} has {} values, state has {}", p.len(), self.m[i].len()),
                );
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad.take() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, value) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] as f64;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *value = (*value as f64 - self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
            p.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f32, g: f32) -> Tensor {
        let mut t = Tensor::full([1], v).with_grad();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut p = [param(0.0, 1.0)];
        let mut opt = OptimState::new(1e-3);
        opt.adam_step(&mut p).unwrap();
        // lr * m_hat / (sqrt(v_hat) + eps) with m_hat = v_hat = 1
        let expect = -(1e-3f64 / (1.0 + 1e-8));
        assert!((p[0].data()[0] as f64 - expect).abs() < 1e-10);
        assert!((p[0].data()[0] as f64 + 9.99999e-4).abs() < 5e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = [param(0.25, 0.0)];
        let mut opt = OptimState::new(1e-3);
        for _ in 0..5 {
            opt.adam_step(&mut p).unwrap();
        }
        assert_eq!(p[0].data()[0], 0.25);
    }

    #[test]
    fn second_step_is_not_larger_than_first() {
        let mut p = [param(0.0, 1.0)];
        let mut opt = OptimState::new(1e-3);
        opt.adam_step(&mut p).unwrap();
        let d1 = p[0].data()[0] as f64;
        opt.adam_step(&mut p).unwrap();
        let d2 = p[0].data()[0] as f64 - d1;
        assert!(d2.abs() <= d1.abs() + 1e-9, "{d1} {d2}");
        assert_eq!(opt.steps_taken(), 2);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut opt = OptimState::new(1e-3);
        opt.adam_step(&mut [param(0.0, 1.0)]).unwrap();
        let mut wrong = [Tensor::zeros([3]).with_grad()];
        assert!(opt.adam_step(&mut wrong).is_err());
    }
}
