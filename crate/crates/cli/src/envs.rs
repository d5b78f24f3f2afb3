use arl_core::disentangle::DisentangleEnv;
use arl_core::env::{EnvSpec, Environment, ResetMode, StepResult};
use arl_core::maze::MazeEnv;
use arl_core::Result;
use rand::RngCore;

/// Either of the bundled environments, chosen at run time from the config.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Maze(MazeEnv),
    Disentangle(DisentangleEnv),
}

macro_rules! delegate {
    ($self:expr, $env:ident => $body:expr) => {
        match $self {
            AnyEnv::Maze($env) => $body,
            AnyEnv::Disentangle($env) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn spec(&self) -> &EnvSpec {
        delegate!(self, e => e.spec())
    }

    fn reset(&mut self, mode: &ResetMode, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        delegate!(self, e => e.reset(mode, rng))
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        delegate!(self, e => e.step(action))
    }

    fn state(&self) -> Option<Vec<f64>> {
        delegate!(self, e => e.state())
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        delegate!(self, e => e.check_state(s))
    }

    fn set_success_detection(&mut self, enabled: bool) {
        delegate!(self, e => e.set_success_detection(enabled))
    }

    fn clock(&self) -> usize {
        delegate!(self, e => e.clock())
    }

    fn restart_clock(&mut self) {
        delegate!(self, e => e.restart_clock())
    }
}
