use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::mlp::{Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
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
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Config("Adam betas must lie in (0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, tensor_lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = tensor_lens.into_iter().collect();
        Adam {
            config,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    pub fn for_mlp(config: AdamConfig, mlp: &Mlp) -> Self {
        Self::new(config, mlp.tensors().iter().map(|t| t.len()))
    }

    /// One bias-corrected Adam update.
    ///
    /// A call whose gradients are all exactly zero leaves both the
    /// parameters and the optimizer state untouched. Non-finite gradients
    /// are rejected before anything is modified; the error carries
    /// `layer_of(tensor_index)`.
    pub fn step(
        &mut self,
        params: Vec<&mut [f64]>,
        grads: Vec<&[f64]>,
        layer_of: impl Fn(usize) -> usize,
    ) -> Result<()> {
        check_len("adam tensor count", self.m.len(), params.len())?;
        check_len("adam gradient count", self.m.len(), grads.len())?;
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            check_len("adam tensor", self.m[i].len(), p.len())?;
            check_len("adam gradient", self.m[i].len(), g.len())?;
        }
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    what: "gradient",
                    layer: layer_of(i),
                });
            }
        }
        if grads.iter().all(|g| g.iter().all(|&x| x == 0.0)) {
            return Ok(());
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_mlp(&mut self, mlp: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        self.step(mlp.tensors_mut(), grads.tensors(), |i| i / 2)
    }

    pub fn step_scalar(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        self.step(vec![std::slice::from_mut(param)], vec![&[grad]], |_| 0)
    }
}
