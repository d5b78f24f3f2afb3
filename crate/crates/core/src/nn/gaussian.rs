//! Tanh-squashed diagonal Gaussian policy head.

use crate::error::{check_len, Result};

/// Lower clamp for the policy's log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
/// Upper clamp for the policy's log standard deviation.
pub const LOG_STD_MAX: f64 = 2.0;
/// Guard inside `log(1 − tanh(u)² + SQUASH_EPS)`.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Largest representable magnitude strictly below one.
const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

fn squash(u: f64) -> f64 {
    u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    /// Always within `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        check_len("gaussian head log_std", mean.len(), log_std.len())?;
        let log_std = log_std
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(GaussianHead { mean, log_std })
    }

    /// Splits a policy network output `[mean; raw_log_std]`.
    pub fn from_output(out: &[f64]) -> Result<Self> {
        let d = out.len() / 2;
        check_len("policy output", 2 * d, out.len())?;
        Self::new(out[..d].to_vec(), out[d..].to_vec())
    }

    pub fn action_dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized sample `tanh(mean + std·noise)` with its log density.
    pub fn sample(&self, noise: &[f64]) -> Result<SquashedSample> {
        check_len("gaussian noise", self.action_dim(), noise.len())?;
        let mut action = Vec::with_capacity(noise.len());
        let mut log_prob = 0.0;
        for ((&m, &ls), &e) in self.mean.iter().zip(&self.log_std).zip(noise) {
            let a = squash(m + ls.exp() * e);
            log_prob += -0.5 * e * e - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
            action.push(a);
        }
        Ok(SquashedSample { action, log_prob })
    }

    /// `tanh(mean)`: the limit of samples as the spread vanishes.
    pub fn mode(&self) -> Vec<f64> {
        self.mean.iter().map(|&m| squash(m)).collect()
    }

    /// Log density of a given squashed action.
    pub fn log_prob_of_action(&self, action: &[f64]) -> Result<f64> {
        check_len("action", self.action_dim(), action.len())?;
        let mut lp = 0.0;
        for ((&m, &ls), &a) in self.mean.iter().zip(&self.log_std).zip(action) {
            let u = a.atanh();
            let z = (u - m) / ls.exp();
            lp += -0.5 * z * z - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
        }
        Ok(lp)
    }
}

/// Batched reparameterized samples with the intermediates needed for backprop.
#[derive(Debug, Clone)]
pub struct SquashedBatch {
    batch: usize,
    dim: usize,
    /// Row-major `(batch, dim)`.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// `std·noise` per entry, i.e. `∂u/∂log_std`.
    spread: Vec<f64>,
    /// Whether the raw log-std was inside the clamp (gradient passes).
    log_std_free: Vec<bool>,
}

impl SquashedBatch {
    /// `policy_out` is `(batch, 2·dim)` laid out `[mean; raw_log_std]` per row.
    pub fn sample(policy_out: &[f64], noise: &[f64], batch: usize, dim: usize) -> Result<Self> {
        check_len("policy output batch", batch * 2 * dim, policy_out.len())?;
        check_len("noise batch", batch * dim, noise.len())?;
        let n = batch * dim;
        let mut out = SquashedBatch {
            batch,
            dim,
            actions: Vec::with_capacity(n),
            log_probs: vec![0.0; batch],
            spread: Vec::with_capacity(n),
            log_std_free: Vec::with_capacity(n),
        };
        for b in 0..batch {
            let row = &policy_out[b * 2 * dim..(b + 1) * 2 * dim];
            let mut lp = 0.0;
            for j in 0..dim {
                let raw = row[dim + j];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = noise[b * dim + j];
                let spread = ls.exp() * e;
                let a = squash(row[j] + spread);
                lp += -0.5 * e * e - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
                out.actions.push(a);
                out.spread.push(spread);
                out.log_std_free.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&raw));
            }
            out.log_probs[b] = lp;
        }
        Ok(out)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Chain rule from `∂L/∂action` (batch, dim) and `∂L/∂log_prob` (batch)
    /// back to the policy output (batch, 2·dim).
    pub fn backward(&self, d_action: &[f64], d_log_prob: &[f64]) -> Result<Vec<f64>> {
        check_len("action gradient", self.batch * self.dim, d_action.len())?;
        check_len("log-prob gradient", self.batch, d_log_prob.len())?;
        let d = self.dim;
        let mut grad = vec![0.0; self.batch * 2 * d];
        for b in 0..self.batch {
            for j in 0..d {
                let k = b * d + j;
                let a = self.actions[k];
                let one_minus = 1.0 - a * a;
                // ∂/∂u of −log(1 − tanh(u)² + eps).
                let dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
                let du = d_action[k] * one_minus + d_log_prob[b] * dlogp_du;
                grad[b * 2 * d + j] = du;
                if self.log_std_free[k] {
                    // u = mean + exp(ls)·noise, and log N contributes −ls.
                    grad[b * 2 * d + d + j] = du * self.spread[k] - d_log_prob[b];
                }
            }
        }
        Ok(grad)
    }
}
