//! Adam optimizer over named parameters.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction, constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// Apply one update. Only the names present in `grads` are touched; a
    /// zero learning rate performs no writes at all, so parameters stay
    /// bit-identical.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?;
            if grad.numel() != param.numel() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient {:?} vs parameter {:?} for '{name}'",
                        grad.shape(),
                        param.shape()
                    ),
                ));
            }
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.numel()]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; grad.numel()]);
            for ((g, m_i), v_i) in grad.data().iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g;
                *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g * g;
            }
            if self.learning_rate == 0.0 {
                continue;
            }
            let data = param.data_mut();
            for ((p, m_i), v_i) in data.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m_i / bc1;
                let v_hat = v_i / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
