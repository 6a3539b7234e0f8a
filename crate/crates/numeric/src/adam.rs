//! Adam optimizer with bias correction.

use crate::element::Element;
use crate::error::TensorError;
use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Per-parameter first/second moment state plus the shared step counter.
pub struct Adam<T: Element> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    /// State sized to match `params` (one moment pair per tensor, in order).
    pub fn new(cfg: AdamConfig, params: &[(String, Tensor<T>)]) -> Self {
        assert!(cfg.lr > 0.0, "learning rate must be positive");
        Adam {
            cfg,
            step: 0,
            m: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
            v: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Adjust the learning rate mid-run (decay schedules).
    pub fn set_lr(&mut self, lr: f64) {
        assert!(lr > 0.0, "learning rate must be positive");
        self.cfg.lr = lr;
    }

    /// Restore the step counter when resuming from a checkpoint.
    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// First and second moment tensors, in parameter order.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restore moments saved by a previous run; shapes must match.
    pub fn restore_moments(
        &mut self,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    ) -> Result<(), TensorError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(TensorError::ParamCountMismatch {
                state: self.m.len(),
                given: m.len().min(v.len()),
            });
        }
        for (i, (mm, vv)) in m.iter().zip(&v).enumerate() {
            if mm.shape() != self.m[i].shape() || vv.shape() != self.v[i].shape() {
                return Err(TensorError::ParamShapeMismatch {
                    name: format!("moment {i}"),
                    state: self.m[i].shape().to_vec(),
                    given: mm.shape().to_vec(),
                });
            }
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update. If any gradient is non-finite the step aborts before
    /// touching parameters or moments, and the offending parameter is named.
    pub fn step(
        &mut self,
        params: &mut [(String, Tensor<T>)],
        grads: &Gradients<T>,
    ) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::ParamCountMismatch {
                state: self.m.len(),
                given: params.len().min(grads.len()),
            });
        }
        for (i, (name, p)) in params.iter().enumerate() {
            let g = grads.by_index(i);
            if g.shape() != p.shape() {
                return Err(TensorError::ParamShapeMismatch {
                    name: name.clone(),
                    state: p.shape().to_vec(),
                    given: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGrad { name: name.clone() });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one = T::one();
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);

        for (i, (_, p)) in params.iter_mut().enumerate() {
            let g = grads.by_index(i).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                pd[j] = pd[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
