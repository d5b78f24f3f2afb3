//! Alternating adversary/protagonist training and its baselines.
//!
//! Each iteration runs `k_a` adversary-phase episodes followed by `k_p`
//! protagonist-phase episodes. In every episode the adversary controls the
//! agent for `h_a` steps from a reset-distribution sample, then the
//! protagonist takes over from wherever the adversary left it for up to
//! `h_p` steps. Both agents store every transition they generate; only the
//! agent whose phase it is takes gradient steps.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{compute_return, Environment, ResetMode, RngStream, RngStreamState, Terminal};
use crate::error::{Error, Result};
use crate::sac::{standard_normal, ReplayBuffer, ReplayContents, SacAgent, SacConfig, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    Learned,
    Random,
    None,
}

impl AdversaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryKind::Learned => "learned",
            AdversaryKind::Random => "random",
            AdversaryKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArlConfig {
    /// Number of iterations `N`.
    pub iterations: usize,
    pub k_a: usize,
    pub k_p: usize,
    pub h_a: usize,
    pub h_p: usize,
    pub adversary_kind: AdversaryKind,
    pub relabel_adversary_rewards: bool,
}

impl Default for ArlConfig {
    fn default() -> Self {
        ArlConfig {
            iterations: 200,
            k_a: 10,
            k_p: 10,
            h_a: 100,
            h_p: 100,
            adversary_kind: AdversaryKind::Learned,
            relabel_adversary_rewards: false,
        }
    }
}

impl ArlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.k_a == 0 || self.k_p == 0 || self.h_p == 0 {
            return Err(Error::Config(
                "iterations, k_a, k_p and h_p must all be at least 1".into(),
            ));
        }
        if self.adversary_kind == AdversaryKind::None && self.h_a != 0 {
            return Err(Error::Config(format!(
                "adversary_kind = none requires h_a = 0, got {}",
                self.h_a
            )));
        }
        Ok(())
    }

    /// Episodes run per iteration. Without an adversary there is nothing to
    /// train in phase A, so only protagonist-phase episodes are run.
    pub fn episodes_per_iteration(&self) -> usize {
        match self.adversary_kind {
            AdversaryKind::None => self.k_p,
            _ => self.k_a + self.k_p,
        }
    }

    /// Iterations needed to spend an episode budget (rounded down, at least 1).
    pub fn iterations_for_budget(&self, episodes: usize) -> usize {
        (episodes / self.episodes_per_iteration()).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    P,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::P => "P",
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    Collision,
    /// The adversary drove the agent into a collision; no protagonist steps ran.
    AdversaryCollision,
    Timeout,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Success => "success",
            Termination::Collision => "collision",
            Termination::AdversaryCollision => "adversary_collision",
            Termination::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub adversary_train_calls: u64,
    pub protagonist_train_calls: u64,
    pub adversary_insertions: u64,
    pub protagonist_insertions: u64,
    pub episodes: u64,
    pub successes: u64,
    pub collisions: u64,
    pub adversary_collisions: u64,
}

impl PhaseLog {
    fn record(&mut self, t: Termination) {
        self.episodes += 1;
        match t {
            Termination::Success => self.successes += 1,
            Termination::Collision => self.collisions += 1,
            Termination::AdversaryCollision => self.adversary_collisions += 1,
            Termination::Timeout => {}
        }
    }
}

/// One episode as seen by the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Global episode index, counted from 0 across the whole run.
    pub episode: u64,
    pub start_state: Vec<f64>,
    /// State at which the protagonist took over.
    pub handoff_state: Vec<f64>,
    pub adversary_return: f64,
    pub protagonist_return: f64,
    pub protagonist_discounted_return: f64,
    pub adversary_steps: usize,
    pub protagonist_steps: usize,
    pub termination: Termination,
    pub adversary_buffer_len: usize,
    pub protagonist_buffer_len: usize,
    /// Every state occupied during the episode, in order.
    pub states: Vec<Vec<f64>>,
}

pub const METRICS_HEADER: &str = "iteration,phase,episode,adversary_return,protagonist_return,\
protagonist_discounted_return,termination,adversary_steps,protagonist_steps,start_state,\
handoff_state,adversary_buffer,protagonist_buffer";

fn join_state(s: &[f64]) -> String {
    s.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

impl EpisodeRecord {
    /// One CSV line without the trailing newline. Floats use the shortest
    /// round-trip representation so identical runs give identical bytes.
    pub fn csv_row(&self) -> String {
        let mut line = String::new();
        write!(
            line,
            "{},{},{},{:?},{:?},{:?},{},{},{},{},{},{},{}",
            self.iteration,
            self.phase.as_str(),
            self.episode,
            self.adversary_return,
            self.protagonist_return,
            self.protagonist_discounted_return,
            self.termination.as_str(),
            self.adversary_steps,
            self.protagonist_steps,
            join_state(&self.start_state),
            join_state(&self.handoff_state),
            self.adversary_buffer_len,
            self.protagonist_buffer_len,
        )
        .expect("writing to a String cannot fail");
        line
    }
}

/// `−V_P(s′)`, the adversary's per-step reward.
pub fn adversary_reward(protagonist: &SacAgent, s_next: &[f64], noise: &[f64]) -> Result<f64> {
    Ok(-protagonist.soft_value(s_next, noise)?)
}

/// Uniform on the open cube (−1, 1)^d.
pub fn random_adversary_action<R: Rng + ?Sized>(rng: &mut R, action_dim: usize) -> Vec<f64> {
    (0..action_dim)
        .map(|_| loop {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x > -1.0 {
                break x;
            }
        })
        .collect()
}

pub const STREAM_ENV: &str = "env";
pub const STREAM_PROTAGONIST_INIT: &str = "init.protagonist";
pub const STREAM_PROTAGONIST_ACT: &str = "protagonist.act";
pub const STREAM_PROTAGONIST_TRAIN: &str = "protagonist.train";
pub const STREAM_ADVERSARY_INIT: &str = "init.adversary";
pub const STREAM_ADVERSARY_ACT: &str = "adversary.act";
pub const STREAM_ADVERSARY_TRAIN: &str = "adversary.train";
pub const STREAM_ADVERSARY_REWARD: &str = "adversary.reward";

#[derive(Debug, Clone)]
struct Streams {
    env: RngStream,
    p_act: RngStream,
    p_train: RngStream,
    a_act: RngStream,
    a_train: RngStream,
    a_reward: RngStream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            env: RngStream::new(seed, STREAM_ENV),
            p_act: RngStream::new(seed, STREAM_PROTAGONIST_ACT),
            p_train: RngStream::new(seed, STREAM_PROTAGONIST_TRAIN),
            a_act: RngStream::new(seed, STREAM_ADVERSARY_ACT),
            a_train: RngStream::new(seed, STREAM_ADVERSARY_TRAIN),
            a_reward: RngStream::new(seed, STREAM_ADVERSARY_REWARD),
        }
    }

    fn all(&self) -> [&RngStream; 6] {
        [&self.env, &self.p_act, &self.p_train, &self.a_act, &self.a_train, &self.a_reward]
    }

    fn restore(states: &[RngStreamState]) -> Result<Self> {
        let find = |label: &str| {
            states
                .iter()
                .find(|s| s.label == label)
                .map(RngStream::from_state)
                .ok_or_else(|| Error::InvalidState(format!("missing random stream `{label}`")))
        };
        Ok(Streams {
            env: find(STREAM_ENV)?,
            p_act: find(STREAM_PROTAGONIST_ACT)?,
            p_train: find(STREAM_PROTAGONIST_TRAIN)?,
            a_act: find(STREAM_ADVERSARY_ACT)?,
            a_train: find(STREAM_ADVERSARY_TRAIN)?,
            a_reward: find(STREAM_ADVERSARY_REWARD)?,
        })
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerSnapshot {
    pub config: ArlConfig,
    pub seed: u64,
    pub protagonist: SacAgent,
    pub adversary: Option<SacAgent>,
    pub protagonist_buffer: ReplayContents,
    pub adversary_buffer: Option<ReplayContents>,
    pub streams: Vec<RngStreamState>,
    pub log: PhaseLog,
    pub iterations_done: usize,
    pub episodes_done: u64,
}

#[derive(Debug, Clone)]
pub struct Trainer<E: Environment> {
    config: ArlConfig,
    seed: u64,
    env: E,
    protagonist: SacAgent,
    adversary: Option<SacAgent>,
    protagonist_buffer: ReplayBuffer,
    adversary_buffer: Option<ReplayBuffer>,
    streams: Streams,
    log: PhaseLog,
    iterations_done: usize,
    episodes_done: u64,
}

impl<E: Environment> Trainer<E> {
    /// `adversary_sac` is used only for the learned adversary; the random
    /// adversary still keeps a buffer of `protagonist_sac.buffer_capacity`.
    pub fn new(
        env: E,
        config: ArlConfig,
        protagonist_sac: SacConfig,
        adversary_sac: SacConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let spec = env.spec().clone();
        spec.validate()?;
        let protagonist = SacAgent::new(
            protagonist_sac.clone(),
            &spec,
            &mut RngStream::new(seed, STREAM_PROTAGONIST_INIT),
        )?;
        let adversary = match config.adversary_kind {
            AdversaryKind::Learned => Some(SacAgent::new(
                adversary_sac.clone(),
                &spec,
                &mut RngStream::new(seed, STREAM_ADVERSARY_INIT),
            )?),
            _ => {
                adversary_sac.validate()?;
                None
            }
        };
        let adversary_buffer = match config.adversary_kind {
            AdversaryKind::None => None,
            AdversaryKind::Learned => Some(ReplayBuffer::new(
                adversary_sac.buffer_capacity,
                spec.state_dim,
                spec.action_dim,
            )?),
            AdversaryKind::Random => Some(ReplayBuffer::new(
                protagonist_sac.buffer_capacity,
                spec.state_dim,
                spec.action_dim,
            )?),
        };
        Ok(Trainer {
            protagonist_buffer: ReplayBuffer::new(
                protagonist_sac.buffer_capacity,
                spec.state_dim,
                spec.action_dim,
            )?,
            adversary_buffer,
            config,
            seed,
            env,
            protagonist,
            adversary,
            streams: Streams::new(seed),
            log: PhaseLog::default(),
            iterations_done: 0,
            episodes_done: 0,
        })
    }

    pub fn config(&self) -> &ArlConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn env_mut(&mut self) -> &mut E {
        &mut self.env
    }

    pub fn protagonist(&self) -> &SacAgent {
        &self.protagonist
    }

    pub fn adversary(&self) -> Option<&SacAgent> {
        self.adversary.as_ref()
    }

    pub fn protagonist_buffer(&self) -> &ReplayBuffer {
        &self.protagonist_buffer
    }

    pub fn adversary_buffer(&self) -> Option<&ReplayBuffer> {
        self.adversary_buffer.as_ref()
    }

    pub fn log(&self) -> &PhaseLog {
        &self.log
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations_done
    }

    pub fn is_finished(&self) -> bool {
        self.iterations_done >= self.config.iterations
    }

    /// Runs the next iteration, handing each finished episode to `on_episode`.
    pub fn run_iteration(&mut self, on_episode: &mut dyn FnMut(&EpisodeRecord) -> Result<()>) -> Result<()> {
        if self.is_finished() {
            return Err(Error::Contract("all iterations have already run".into()));
        }
        let phases = match self.config.adversary_kind {
            AdversaryKind::None => vec![Phase::P; self.config.k_p],
            _ => std::iter::repeat_n(Phase::A, self.config.k_a)
                .chain(std::iter::repeat_n(Phase::P, self.config.k_p))
                .collect(),
        };
        for phase in phases {
            let record = self.run_episode(phase).map_err(|e| {
                if e.is_divergence() {
                    Error::DivergedAt {
                        iteration: self.iterations_done,
                        episode: self.episodes_done,
                        source: Box::new(e),
                    }
                } else {
                    e
                }
            })?;
            self.episodes_done += 1;
            on_episode(&record)?;
        }
        self.iterations_done += 1;
        Ok(())
    }

    /// Runs all remaining iterations.
    pub fn run(&mut self, on_episode: &mut dyn FnMut(&EpisodeRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.run_iteration(on_episode)?;
        }
        Ok(())
    }

    /// One episode: adversary prefix, then the protagonist without a reset.
    pub fn run_episode(&mut self, phase: Phase) -> Result<EpisodeRecord> {
        let cfg = self.config.clone();
        let action_dim = self.env.spec().action_dim;
        let mut s = self.env.reset(&ResetMode::ResetDistribution, &mut self.streams.env)?;
        let start_state = s.clone();
        let mut states = vec![s.clone()];
        let mut adversary_return = 0.0;
        let mut adversary_steps = 0;
        let mut adversary_collided = false;

        self.env.set_success_detection(false);
        for _ in 0..cfg.h_a {
            let a = match (&self.adversary, cfg.adversary_kind) {
                (Some(adv), _) => adv.act_rng(&s, false, &mut self.streams.a_act)?,
                (None, AdversaryKind::Random) => random_adversary_action(&mut self.streams.a_act, action_dim),
                (None, _) => return Err(Error::Contract("adversary steps without an adversary".into())),
            };
            let step = self.env.step(&a)?;
            adversary_collided = step.terminal == Terminal::Collision;
            let r = if adversary_collided {
                step.reward
            } else {
                let noise = standard_normal(&mut self.streams.a_reward, action_dim);
                adversary_reward(&self.protagonist, &step.s_next, &noise)?
            };
            adversary_return += r;
            adversary_steps += 1;
            let buffer = self
                .adversary_buffer
                .as_mut()
                .ok_or_else(|| Error::Contract("adversary steps without an adversary buffer".into()))?;
            buffer.push(Transition {
                s: s.clone(),
                a,
                r,
                s_next: step.s_next.clone(),
                done: adversary_collided,
            })?;
            self.log.adversary_insertions += 1;
            if phase == Phase::A && cfg.adversary_kind != AdversaryKind::Random {
                self.train_adversary()?;
            }
            s = step.s_next;
            states.push(s.clone());
            if adversary_collided {
                break;
            }
        }
        self.env.set_success_detection(true);
        self.env.restart_clock();

        let handoff_state = s.clone();
        let mut rewards = Vec::new();
        let mut termination = if adversary_collided {
            Termination::AdversaryCollision
        } else {
            Termination::Timeout
        };
        if !adversary_collided {
            for _ in 0..cfg.h_p {
                let a = self.protagonist.act_rng(&s, false, &mut self.streams.p_act)?;
                let step = self.env.step(&a)?;
                let done = step.terminal.is_terminal();
                self.protagonist_buffer.push(Transition {
                    s: s.clone(),
                    a,
                    r: step.reward,
                    s_next: step.s_next.clone(),
                    done,
                })?;
                self.log.protagonist_insertions += 1;
                if phase == Phase::P {
                    self.protagonist
                        .train(&self.protagonist_buffer, &mut self.streams.p_train, None)?;
                    self.log.protagonist_train_calls += 1;
                }
                rewards.push(step.reward);
                s = step.s_next;
                states.push(s.clone());
                match step.terminal {
                    Terminal::Success => termination = Termination::Success,
                    Terminal::Collision => termination = Termination::Collision,
                    Terminal::None => {}
                }
                if done {
                    break;
                }
            }
        }
        self.log.record(termination);

        Ok(EpisodeRecord {
            iteration: self.iterations_done,
            phase,
            episode: self.episodes_done,
            start_state,
            handoff_state,
            adversary_return,
            protagonist_return: rewards.iter().sum(),
            protagonist_discounted_return: compute_return(&rewards, self.protagonist.config.gamma),
            adversary_steps,
            protagonist_steps: rewards.len(),
            termination,
            adversary_buffer_len: self.adversary_buffer.as_ref().map_or(0, |b| b.len()),
            protagonist_buffer_len: self.protagonist_buffer.len(),
            states,
        })
    }

    fn train_adversary(&mut self) -> Result<()> {
        let (Some(adv), Some(buffer)) = (self.adversary.as_mut(), self.adversary_buffer.as_ref()) else {
            return Ok(());
        };
        if self.config.relabel_adversary_rewards {
            let protagonist = &self.protagonist;
            let reward_rng = &mut self.streams.a_reward;
            let dim = protagonist.action_dim;
            let mut relabel = |s_next: &[f64], stored: f64, done: bool| -> Result<f64> {
                if done {
                    return Ok(stored);
                }
                let noise = standard_normal(reward_rng, dim);
                adversary_reward(protagonist, s_next, &noise)
            };
            adv.train(buffer, &mut self.streams.a_train, Some(&mut relabel))?;
        } else {
            adv.train(buffer, &mut self.streams.a_train, None)?;
        }
        self.log.adversary_train_calls += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot {
            config: self.config.clone(),
            seed: self.seed,
            protagonist: self.protagonist.clone(),
            adversary: self.adversary.clone(),
            protagonist_buffer: self.protagonist_buffer.contents(),
            adversary_buffer: self.adversary_buffer.as_ref().map(|b| b.contents()),
            streams: self.streams.all().iter().map(|s| s.state()).collect(),
            log: self.log.clone(),
            iterations_done: self.iterations_done,
            episodes_done: self.episodes_done,
        }
    }

    /// Rebuilds a trainer from a snapshot; `env` must match the one used
    /// originally. Episodes always begin with a reset, so no environment
    /// state needs restoring.
    pub fn restore(env: E, snap: TrainerSnapshot) -> Result<Self> {
        snap.config.validate()?;
        let spec = env.spec();
        if spec.state_dim != snap.protagonist.state_dim || spec.action_dim != snap.protagonist.action_dim {
            return Err(Error::InvalidState(
                "snapshot dimensions do not match the environment".into(),
            ));
        }
        if (snap.config.adversary_kind == AdversaryKind::Learned) != snap.adversary.is_some()
            || (snap.config.adversary_kind == AdversaryKind::None) != snap.adversary_buffer.is_none()
        {
            return Err(Error::InvalidState(
                "snapshot adversary does not match its configuration".into(),
            ));
        }
        Ok(Trainer {
            streams: Streams::restore(&snap.streams)?,
            protagonist_buffer: ReplayBuffer::from_contents(snap.protagonist_buffer)?,
            adversary_buffer: snap.adversary_buffer.map(ReplayBuffer::from_contents).transpose()?,
            config: snap.config,
            seed: snap.seed,
            env,
            protagonist: snap.protagonist,
            adversary: snap.adversary,
            log: snap.log,
            iterations_done: snap.iterations_done,
            episodes_done: snap.episodes_done,
        })
    }

    pub fn into_parts(self) -> (E, SacAgent, Option<SacAgent>, PhaseLog) {
        (self.env, self.protagonist, self.adversary, self.log)
    }
}

/// Plain SAC on the reset distribution, written independently of
/// [`Trainer`]; `iterations × episodes_per_iteration` episodes of at most
/// `horizon` steps with one training call per step.
pub fn train_plain_sac<E: Environment>(
    env: &mut E,
    sac: SacConfig,
    iterations: usize,
    episodes_per_iteration: usize,
    horizon: usize,
    seed: u64,
    on_episode: &mut dyn FnMut(&EpisodeRecord) -> Result<()>,
) -> Result<SacAgent> {
    let spec = env.spec().clone();
    let mut agent = SacAgent::new(sac.clone(), &spec, &mut RngStream::new(seed, STREAM_PROTAGONIST_INIT))?;
    let mut buffer = ReplayBuffer::new(sac.buffer_capacity, spec.state_dim, spec.action_dim)?;
    let mut env_rng = RngStream::new(seed, STREAM_ENV);
    let mut act_rng = RngStream::new(seed, STREAM_PROTAGONIST_ACT);
    let mut train_rng = RngStream::new(seed, STREAM_PROTAGONIST_TRAIN);
    let mut episode = 0u64;
    for iteration in 0..iterations {
        for _ in 0..episodes_per_iteration {
            let mut s = env.reset(&ResetMode::ResetDistribution, &mut env_rng)?;
            env.set_success_detection(true);
            env.restart_clock();
            let start = s.clone();
            let mut states = vec![s.clone()];
            let mut rewards = Vec::new();
            let mut termination = Termination::Timeout;
            for _ in 0..horizon {
                let a = agent.act_rng(&s, false, &mut act_rng)?;
                let step = env.step(&a)?;
                let done = step.terminal.is_terminal();
                buffer.push(Transition {
                    s,
                    a,
                    r: step.reward,
                    s_next: step.s_next.clone(),
                    done,
                })?;
                agent.train(&buffer, &mut train_rng, None)?;
                rewards.push(step.reward);
                s = step.s_next;
                states.push(s.clone());
                if done {
                    termination = if step.terminal == Terminal::Success {
                        Termination::Success
                    } else {
                        Termination::Collision
                    };
                    break;
                }
            }
            on_episode(&EpisodeRecord {
                iteration,
                phase: Phase::P,
                episode,
                handoff_state: start.clone(),
                start_state: start,
                adversary_return: 0.0,
                protagonist_return: rewards.iter().sum(),
                protagonist_discounted_return: compute_return(&rewards, sac.gamma),
                adversary_steps: 0,
                protagonist_steps: rewards.len(),
                termination,
                adversary_buffer_len: 0,
                protagonist_buffer_len: buffer.len(),
                states,
            })?;
            episode += 1;
        }
    }
    Ok(agent)
}
