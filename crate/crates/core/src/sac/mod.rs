//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! optionally learned entropy coefficient.

mod replay;

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use replay::{Batch, ReplayBuffer, ReplayContents, Transition};

use crate::env::EnvSpec;
use crate::error::{check_len, Error, Result};
use crate::nn::{Adam, AdamConfig, GaussianHead, Mlp, MlpGrads, SquashedBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EntropyMode {
    Fixed {
        alpha: f64,
    },
    /// Learned coefficient; `target_entropy` defaults to `−action_dim`.
    /// With rewards of order one, a large starting coefficient makes the
    /// entropy bonus outweigh terminal rewards until the critics unlearn it.
    Auto {
        target_entropy: Option<f64>,
        initial_alpha: f64,
    },
}

impl Default for EntropyMode {
    fn default() -> Self {
        EntropyMode::Auto {
            target_entropy: None,
            initial_alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_steps_per_env_step: usize,
    pub entropy: EntropyMode,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            grad_steps_per_env_step: 1,
            entropy: EntropyMode::default(),
            buffer_capacity: 200_000,
            hidden: vec![64, 64],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("sac.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("sac.tau must lie in (0, 1], got {}", self.tau));
        }
        AdamConfig::with_lr(self.lr).validate()?;
        if self.batch_size == 0 || self.grad_steps_per_env_step == 0 || self.buffer_capacity == 0 {
            return bad("sac batch size, gradient steps and buffer capacity must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("sac hidden layer sizes must be positive".into());
        }
        match self.entropy {
            EntropyMode::Fixed { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => {
                bad(format!("fixed entropy coefficient must be non-negative, got {alpha}"))
            }
            EntropyMode::Auto { initial_alpha, .. } if !(initial_alpha > 0.0) => {
                bad("initial entropy coefficient must be positive".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

/// Actor objective and its gradients for a fixed batch and noise.
#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub loss: f64,
    pub policy: MlpGrads,
    /// Gradient of the entropy-coefficient loss w.r.t. `log_alpha`.
    pub log_alpha: f64,
    pub mean_log_prob: f64,
}

/// Critic objective and gradients for a fixed batch and next-action noise.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub loss1: f64,
    pub loss2: f64,
    pub q1: MlpGrads,
    pub q2: MlpGrads,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    state_low: Vec<f64>,
    state_high: Vec<f64>,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub policy_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub log_alpha: f64,
    pub alpha_opt: Adam,
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let policy = Mlp::new(&sizes(sd, 2 * ad), rng)?;
        let q1 = Mlp::new(&sizes(sd + ad, 1), rng)?;
        let q2 = Mlp::new(&sizes(sd + ad, 1), rng)?;
        let adam = AdamConfig::with_lr(config.lr);
        let log_alpha = match config.entropy {
            EntropyMode::Fixed { alpha } => alpha.ln(),
            EntropyMode::Auto { initial_alpha, .. } => initial_alpha.ln(),
        };
        Ok(SacAgent {
            state_dim: sd,
            action_dim: ad,
            state_low: spec.state_low.clone(),
            state_high: spec.state_high.clone(),
            policy_opt: Adam::for_mlp(adam, &policy),
            q1_opt: Adam::for_mlp(adam, &q1),
            q2_opt: Adam::for_mlp(adam, &q2),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha,
            alpha_opt: Adam::new(adam, [1]),
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.config.entropy {
            EntropyMode::Fixed { alpha } => alpha,
            EntropyMode::Auto { .. } => self.log_alpha.exp(),
        }
    }

    pub fn target_entropy(&self) -> Option<f64> {
        match self.config.entropy {
            EntropyMode::Fixed { .. } => None,
            EntropyMode::Auto { target_entropy, .. } => {
                Some(target_entropy.unwrap_or(-(self.action_dim as f64)))
            }
        }
    }

    fn normalize(&self, states: &[f64]) -> Vec<f64> {
        states
            .chunks_exact(self.state_dim)
            .flat_map(|s| {
                s.iter()
                    .zip(&self.state_low)
                    .zip(&self.state_high)
                    .map(|((x, lo), hi)| 2.0 * (x - lo) / (hi - lo) - 1.0)
            })
            .collect()
    }

    fn critic_input(&self, norm_states: &[f64], actions: &[f64], batch: usize) -> Vec<f64> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(batch * (sd + ad));
        for b in 0..batch {
            x.extend_from_slice(&norm_states[b * sd..(b + 1) * sd]);
            x.extend_from_slice(&actions[b * ad..(b + 1) * ad]);
        }
        x
    }

    /// Policy distribution at a single state.
    pub fn head(&self, s: &[f64]) -> Result<GaussianHead> {
        check_len("state", self.state_dim, s.len())?;
        GaussianHead::from_output(&self.policy.predict(&self.normalize(s))?)
    }

    /// `tanh(mean)` when deterministic, otherwise a squashed-Gaussian sample.
    pub fn act(&self, s: &[f64], deterministic: bool, noise: &[f64]) -> Result<Vec<f64>> {
        let head = self.head(s)?;
        if deterministic {
            Ok(head.mode())
        } else {
            Ok(head.sample(noise)?.action)
        }
    }

    /// Draws its own noise when stochastic; consumes nothing when deterministic.
    pub fn act_rng<R: Rng + ?Sized>(&self, s: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        if deterministic {
            self.act(s, true, &[])
        } else {
            let noise = standard_normal(rng, self.action_dim);
            self.act(s, false, &noise)
        }
    }

    /// One-sample soft state value `min(q1, q2)(s, ã) − α·log π(ã|s)`.
    pub fn soft_value(&self, s: &[f64], noise: &[f64]) -> Result<f64> {
        let head = self.head(s)?;
        let sample = head.sample(noise)?;
        let x = self.critic_input(&self.normalize(s), &sample.action, 1);
        let q1 = self.q1.predict(&x)?[0];
        let q2 = self.q2.predict(&x)?[0];
        Ok(q1.min(q2) - self.alpha() * sample.log_prob)
    }

    pub fn q_values(&self, s: &[f64], a: &[f64]) -> Result<(f64, f64)> {
        check_len("state", self.state_dim, s.len())?;
        check_len("action", self.action_dim, a.len())?;
        let x = self.critic_input(&self.normalize(s), a, 1);
        Ok((self.q1.predict(&x)?[0], self.q2.predict(&x)?[0]))
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.size == 0 {
            return Err(Error::Contract("a batch must not be empty".into()));
        }
        let n = batch.size;
        check_len("batch states", n * self.state_dim, batch.states.len())?;
        check_len("batch next states", n * self.state_dim, batch.next_states.len())?;
        check_len("batch actions", n * self.action_dim, batch.actions.len())?;
        check_len("batch rewards", n, batch.rewards.len())?;
        check_len("batch dones", n, batch.dones.len())
    }

    /// Bootstrap targets `r + γ(1 − done)(min target-Q(s′, ã′) − α·log π(ã′|s′))`.
    pub fn critic_targets(&self, batch: &Batch, next_noise: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let n = batch.size;
        let norm_next = self.normalize(&batch.next_states);
        let out = self.policy.forward_batch(&norm_next, n)?;
        let next = SquashedBatch::sample(out.output(), next_noise, n, self.action_dim)?;
        let x = self.critic_input(&norm_next, &next.actions, n);
        let t1 = self.q1_target.forward_batch(&x, n)?;
        let t2 = self.q2_target.forward_batch(&x, n)?;
        let alpha = self.alpha();
        Ok((0..n)
            .map(|i| {
                if batch.dones[i] {
                    batch.rewards[i]
                } else {
                    let soft = t1.output()[i].min(t2.output()[i]) - alpha * next.log_probs[i];
                    batch.rewards[i] + self.config.gamma * soft
                }
            })
            .collect())
    }

    /// Mean squared error of each critic against fixed targets.
    pub fn critic_grads(&self, batch: &Batch, next_noise: &[f64]) -> Result<CriticGrads> {
        let targets = self.critic_targets(batch, next_noise)?;
        let n = batch.size;
        let x = self.critic_input(&self.normalize(&batch.states), &batch.actions, n);
        let mut out = Vec::with_capacity(2);
        for net in [&self.q1, &self.q2] {
            let cache = net.forward_batch(&x, n)?;
            let q = cache.output();
            let loss = q.iter().zip(&targets).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / n as f64;
            let up: Vec<f64> = q
                .iter()
                .zip(&targets)
                .map(|(q, y)| 2.0 * (q - y) / n as f64)
                .collect();
            let (g, _) = net.backprop(&cache, &up)?;
            out.push((loss, g));
        }
        let (loss2, q2) = out.pop().unwrap();
        let (loss1, q1) = out.pop().unwrap();
        Ok(CriticGrads {
            loss1,
            loss2,
            q1,
            q2,
            targets,
        })
    }

    /// One Adam step on both critics; returns the summed losses.
    pub fn critic_update(&mut self, batch: &Batch, next_noise: &[f64]) -> Result<f64> {
        let g = self.critic_grads(batch, next_noise)?;
        let loss = g.loss1 + g.loss2;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                what: "critic loss",
                layer: 0,
            });
        }
        self.q1_opt.step_mlp(&mut self.q1, &g.q1)?;
        self.q2_opt.step_mlp(&mut self.q2, &g.q2)?;
        Ok(loss)
    }

    /// Reparameterized actor loss `mean(α·log π(ã|s) − min(q1, q2)(s, ã))`.
    pub fn actor_grads(&self, states: &[f64], noise: &[f64]) -> Result<ActorGrads> {
        let n = states.len() / self.state_dim;
        if n == 0 {
            return Err(Error::Contract("a batch must not be empty".into()));
        }
        check_len("actor states", n * self.state_dim, states.len())?;
        let (sd, ad) = (self.state_dim, self.action_dim);
        let norm = self.normalize(states);
        let pcache = self.policy.forward_batch(&norm, n)?;
        let sample = SquashedBatch::sample(pcache.output(), noise, n, ad)?;
        let x = self.critic_input(&norm, &sample.actions, n);
        let c1 = self.q1.forward_batch(&x, n)?;
        let c2 = self.q2.forward_batch(&x, n)?;
        let alpha = self.alpha();
        let inv_n = 1.0 / n as f64;

        let mut loss = 0.0;
        let mut up1 = vec![0.0; n];
        let mut up2 = vec![0.0; n];
        for i in 0..n {
            let (q1, q2) = (c1.output()[i], c2.output()[i]);
            loss += alpha * sample.log_probs[i] - q1.min(q2);
            if q1 <= q2 {
                up1[i] = -inv_n;
            } else {
                up2[i] = -inv_n;
            }
        }
        loss *= inv_n;

        let dx1 = self.q1.backprop_input(&c1, &up1)?;
        let dx2 = self.q2.backprop_input(&c2, &up2)?;
        let mut d_action = vec![0.0; n * ad];
        for i in 0..n {
            for j in 0..ad {
                let k = i * (sd + ad) + sd + j;
                d_action[i * ad + j] = dx1[k] + dx2[k];
            }
        }
        let d_log_prob = vec![alpha * inv_n; n];
        let up = sample.backward(&d_action, &d_log_prob)?;
        let (policy, _) = self.policy.backprop(&pcache, &up)?;

        let mean_log_prob = sample.log_probs.iter().sum::<f64>() * inv_n;
        let log_alpha = match self.target_entropy() {
            Some(target) => -(mean_log_prob + target),
            None => 0.0,
        };
        Ok(ActorGrads {
            loss,
            policy,
            log_alpha,
            mean_log_prob,
        })
    }

    /// Entropy-coefficient loss `−log_alpha·mean(log π + target)` with
    /// log-probabilities held fixed.
    pub fn alpha_loss(&self, mean_log_prob: f64) -> f64 {
        match self.target_entropy() {
            Some(target) => -self.log_alpha * (mean_log_prob + target),
            None => 0.0,
        }
    }

    /// One Adam step on the policy and, in auto mode, on `log_alpha`.
    pub fn actor_update(&mut self, states: &[f64], noise: &[f64]) -> Result<f64> {
        let g = self.actor_grads(states, noise)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence {
                what: "actor loss",
                layer: 0,
            });
        }
        self.policy_opt.step_mlp(&mut self.policy, &g.policy)?;
        if self.target_entropy().is_some() {
            self.alpha_opt.step_scalar(&mut self.log_alpha, g.log_alpha)?;
        }
        Ok(g.loss)
    }

    /// `target ← tau·online + (1 − tau)·target` for both critics.
    pub fn polyak(&mut self, tau: f64) -> Result<()> {
        self.q1_target.blend_from(&self.q1, tau)?;
        self.q2_target.blend_from(&self.q2, tau)
    }

    /// One training call: `grad_steps_per_env_step` rounds of critic, actor
    /// and target updates. A no-op until the buffer holds a full batch.
    ///
    /// `relabel`, when given, maps `(next state, stored reward, done)` of each
    /// sampled transition to the reward used for the update.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
        mut relabel: Option<&mut dyn FnMut(&[f64], f64, bool) -> Result<f64>>,
    ) -> Result<Option<TrainStats>> {
        let bs = self.config.batch_size;
        if buffer.len() < bs {
            return Ok(None);
        }
        let mut stats = None;
        for _ in 0..self.config.grad_steps_per_env_step {
            let mut batch = buffer.sample(rng, bs)?;
            if let Some(f) = relabel.as_deref_mut() {
                for i in 0..bs {
                    let s = &batch.next_states[i * self.state_dim..(i + 1) * self.state_dim];
                    batch.rewards[i] = f(s, batch.rewards[i], batch.dones[i])?;
                }
            }
            let next_noise = standard_normal(rng, bs * self.action_dim);
            let critic_loss = self.critic_update(&batch, &next_noise)?;
            let noise = standard_normal(rng, bs * self.action_dim);
            let actor_loss = self.actor_update(&batch.states, &noise)?;
            self.polyak(self.config.tau)?;
            stats = Some(TrainStats {
                critic_loss,
                actor_loss,
                alpha: self.alpha(),
            });
        }
        Ok(stats)
    }

    /// Hash over every learnable value, for change detection in tests.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for net in [&self.policy, &self.q1, &self.q2, &self.q1_target, &self.q2_target] {
            for x in net.flat_params() {
                x.to_bits().hash(&mut h);
            }
        }
        self.log_alpha.to_bits().hash(&mut h);
        h.finish()
    }

    pub fn all_finite(&self) -> bool {
        [&self.policy, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .all(|n| n.all_finite())
            && self.log_alpha.is_finite()
    }
}

#[cfg(test)]
mod tests;
