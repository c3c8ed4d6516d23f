use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are kept per parameter, in
/// parameter-set order.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let m: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update over every parameter. Parameters whose name is rejected
    /// by `trainable` are left untouched.
    pub fn step_filtered(&mut self, params: &mut ParamSet<T>, trainable: impl Fn(&str) -> bool) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer built for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !trainable(&p.name) {
                continue;
            }
            let grad = p.tensor.grad.take().expect("checked above");
            for (((w, g), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * *g;
                *vi = b2 * *vi + one_b2 * *g * *g;
                let m_hat = mi.as_f64() / bc1;
                let v_hat = vi.as_f64() / bc2;
                *w = *w - T::of(lr * m_hat / (v_hat.sqrt() + eps));
            }
            p.tensor.grad = Some(grad);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        self.step_filtered(params, |_| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{zero_grads, Tensor};

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &ps,
        );
        ps.get_mut(id).tensor.grad = Some(vec![1.0]);
        adam.step(&mut ps).unwrap();
        // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
        let w = ps.get(id).tensor.data()[0];
        assert!((w - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let before = ps.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        zero_grads(&mut ps);
        adam.step(&mut ps).unwrap();
        assert_eq!(
            before.iter().next().unwrap().tensor.data(),
            ps.iter().next().unwrap().tensor.data()
        );
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.insert("layer.bias", Tensor::zeros(vec![2])).unwrap();
        ps.get_mut(id).tensor.grad = None;
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        match adam.step(&mut ps) {
            Err(Error::MissingGrad(name)) => assert_eq!(name, "layer.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
