//! The contract shared by every environment and by the training orchestrator.

mod rng;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use rng::{RngStream, RngStreamState};

use crate::error::{Error, Result};

/// Static description of an environment's interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Maps a policy output in (−1, 1) to environment units, per dimension.
    pub action_scale: Vec<f64>,
    /// Protagonist horizon.
    pub horizon: usize,
    /// Bounding box of valid states, used to normalize network inputs.
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "state_dim, action_dim and horizon must be positive".into(),
            ));
        }
        if self.action_scale.len() != self.action_dim
            || self.action_scale.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::Config(
                "action_scale needs one positive finite entry per action dimension".into(),
            ));
        }
        if self.state_low.len() != self.state_dim
            || self.state_high.len() != self.state_dim
            || self.state_low.iter().zip(&self.state_high).any(|(l, h)| !(l < h))
        {
            return Err(Error::Config("state bounds must satisfy low < high".into()));
        }
        Ok(())
    }

    /// Affine map of a state into [−1, 1] per dimension.
    pub fn normalize_state(&self, s: &[f64], out: &mut Vec<f64>) {
        for ((x, lo), hi) in s.iter().zip(&self.state_low).zip(&self.state_high) {
            out.push(2.0 * (x - lo) / (hi - lo) - 1.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    Success,
    Collision,
}

impl Terminal {
    pub fn is_terminal(self) -> bool {
        self != Terminal::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub s_next: Vec<f64>,
    pub reward: f64,
    pub terminal: Terminal,
    /// Set by the orchestrator when a phase horizon is reached; a terminal
    /// outcome takes precedence.
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResetMode {
    /// Sample from the environment's reset distribution.
    ResetDistribution,
    /// Teleport to a given state (evaluation only).
    Explicit(Vec<f64>),
    /// Uniform over all valid states (evaluation only).
    Uniform,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, mode: &ResetMode, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Current state; `None` before the first reset.
    fn state(&self) -> Option<Vec<f64>>;

    /// Validity predicate; the error names the violated condition.
    fn check_state(&self, s: &[f64]) -> Result<()>;

    /// Whether reaching the goal ends the episode. Disabled while the
    /// adversary is in control.
    fn set_success_detection(&mut self, enabled: bool);

    /// Steps taken since the last reset or clock restart.
    fn clock(&self) -> usize;

    /// Restart the step counter without touching the state (control handoff).
    fn restart_clock(&mut self);
}

/// `Σ_t γ^t r_t`; zero for an empty trajectory.
pub fn compute_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

pub(crate) fn scale_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::dim("action", spec.action_dim, action.len()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Contract("action contains non-finite entries".into()));
    }
    Ok(action
        .iter()
        .zip(&spec.action_scale)
        .map(|(a, s)| a * s)
        .collect())
}
