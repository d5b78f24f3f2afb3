//! Planar object-disentangling task.
//!
//! A three-joint arm carries a rigid hook polyline at its tip. The hook
//! starts inside a static ring that is open at the top; the episode succeeds
//! once the hook's centroid is far enough from the ring's center, and any
//! contact between the arm (or hook) and the ring ends it with a penalty
//! that shrinks with time.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{scale_action, EnvSpec, Environment, ResetMode, StepResult, Terminal};
use crate::error::{check_len, Error, Result};

pub type Point = [f64; 2];
pub type Segment = (Point, Point);

const BUNDLED_SCENARIOS: &str = include_str!("../data/scenarios.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub link_lengths: Vec<f64>,
    pub base: Point,
    /// Symmetric limit: every joint lives in `[−joint_limit, joint_limit]`.
    pub joint_limit: f64,
    /// Radians per step for a policy output of ±1.
    pub max_joint_delta: f64,
    pub horizon: usize,
    pub gamma: f64,
    /// Interpolated configurations checked for contact along each step, so
    /// a fast move cannot pass through a ring wall; 1 checks the end only.
    pub collision_substeps: usize,
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig {
            link_lengths: vec![0.4, 0.4, 0.3],
            base: [0.0, 0.0],
            joint_limit: PI,
            max_joint_delta: 0.1,
            horizon: 50,
            gamma: 0.99,
            collision_substeps: 8,
        }
    }
}

impl ArmConfig {
    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.is_empty() || self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if !(self.joint_limit > 0.0)
            || !(self.max_joint_delta > 0.0)
            || self.horizon == 0
            || self.collision_substeps == 0
        {
            return Err(Error::Config(
                "joint limit, joint delta, horizon and collision substeps must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "disentangle gamma must lie in (0, 1) (the collision penalty is singular at 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Hook (attached to the tip) and ring (static) polylines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shapes {
    /// Tip frame: `x` along the last link, `y` to its left.
    pub hook: Vec<Point>,
    /// World frame, open polyline (the gap is between last and first vertex).
    pub ring: Vec<Point>,
    pub ring_center: Point,
    /// Success threshold on the hook-centroid distance.
    pub success_distance: f64,
}

impl Default for Shapes {
    fn default() -> Self {
        let c = [0.55, -0.45];
        let h = 0.22;
        let g = 0.13;
        Shapes {
            hook: vec![[0.0, 0.0], [0.06, 0.0], [0.06, 0.08]],
            ring: vec![
                [c[0] + g, c[1] + h],
                [c[0] + h, c[1] + h],
                [c[0] + h, c[1] - h],
                [c[0] - h, c[1] - h],
                [c[0] - h, c[1] + h],
                [c[0] - g, c[1] + h],
            ],
            ring_center: c,
            success_distance: 0.5,
        }
    }
}

impl Shapes {
    pub fn validate(&self) -> Result<()> {
        for poly in [&self.hook, &self.ring] {
            if poly.len() < 2 {
                return Err(Error::Config("polylines need at least two vertices".into()));
            }
            if poly.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config("polylines must not contain zero-length segments".into()));
            }
        }
        if !(self.success_distance > 0.0) {
            return Err(Error::Config("success distance must be positive".into()));
        }
        Ok(())
    }

    pub fn ring_segments(&self) -> Vec<Segment> {
        self.ring.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// World-frame geometry of the arm at a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmPose {
    /// Base, then every joint/tip position.
    pub joints: Vec<Point>,
    /// Absolute orientation of the last link.
    pub tip_angle: f64,
    pub hook: Vec<Point>,
}

impl ArmPose {
    pub fn tip(&self) -> Point {
        *self.joints.last().unwrap()
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.joints
            .windows(2)
            .chain(self.hook.windows(2))
            .map(|w| (w[0], w[1]))
            .collect()
    }
}

/// Planar forward kinematics: cumulative joint angles along the chain.
pub fn fk(arm: &ArmConfig, shapes: &Shapes, q: &[f64]) -> Result<ArmPose> {
    check_len("joint vector", arm.n_joints(), q.len())?;
    let mut joints = Vec::with_capacity(q.len() + 1);
    let mut p = arm.base;
    let mut angle = 0.0;
    joints.push(p);
    for (qi, len) in q.iter().zip(&arm.link_lengths) {
        angle += qi;
        p = [p[0] + len * angle.cos(), p[1] + len * angle.sin()];
        joints.push(p);
    }
    let (s, c) = angle.sin_cos();
    let hook = shapes
        .hook
        .iter()
        .map(|[u, v]| [p[0] + c * u - s * v, p[1] + s * u + c * v])
        .collect();
    Ok(ArmPose {
        joints,
        tip_angle: angle,
        hook,
    })
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: Point, q: Point, r: Point) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

/// Closed-segment intersection; touching endpoints count.
pub fn segment_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p3, p4, p1))
        || (d2 == 0.0 && on_segment(p3, p4, p2))
        || (d3 == 0.0 && on_segment(p1, p2, p3))
        || (d4 == 0.0 && on_segment(p1, p2, p4))
}

pub fn collides(arm: &ArmConfig, shapes: &Shapes, q: &[f64]) -> Result<bool> {
    let pose = fk(arm, shapes, q)?;
    Ok(pose_collides(&pose, &shapes.ring_segments()))
}

/// Contact anywhere on the straight joint-space path from `from` to `to`,
/// sampled at `arm.collision_substeps` evenly spaced points ending at `to`.
pub fn swept_collides(arm: &ArmConfig, shapes: &Shapes, from: &[f64], to: &[f64]) -> Result<bool> {
    check_len("joint vector", arm.n_joints(), from.len())?;
    check_len("joint vector", arm.n_joints(), to.len())?;
    Ok(path_collides(arm, shapes, &shapes.ring_segments(), from, to))
}

fn path_collides(arm: &ArmConfig, shapes: &Shapes, ring: &[Segment], from: &[f64], to: &[f64]) -> bool {
    let n = arm.collision_substeps;
    (1..=n).any(|k| {
        let f = k as f64 / n as f64;
        let q: Vec<f64> = from.iter().zip(to).map(|(a, b)| a + f * (b - a)).collect();
        let pose = fk(arm, shapes, &q).expect("joint count checked");
        pose_collides(&pose, ring)
    })
}

fn pose_collides(pose: &ArmPose, ring: &[Segment]) -> bool {
    pose.segments()
        .iter()
        .any(|&(a, b)| ring.iter().any(|&(c, d)| segment_intersect(a, b, c, d)))
}

pub fn hook_centroid(pose: &ArmPose) -> Point {
    let n = pose.hook.len() as f64;
    let (sx, sy) = pose
        .hook
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Distance between the hook's vertex centroid and the ring center.
pub fn object_distance(arm: &ArmConfig, shapes: &Shapes, q: &[f64]) -> Result<f64> {
    let pose = fk(arm, shapes, q)?;
    let c = hook_centroid(&pose);
    Ok((c[0] - shapes.ring_center[0]).hypot(c[1] - shapes.ring_center[1]))
}

/// `−(1 − γ^(H−t+1)) / (1 − γ)`, with `t` clamped to `[0, H]`.
pub fn collision_penalty(gamma: f64, horizon: usize, t: usize) -> f64 {
    let t = t.min(horizon);
    let exponent = (horizon - t + 1) as i32;
    -(1.0 - gamma.powi(exponent)) / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub tag: ScenarioTag,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    /// One scenario per non-comment line: `name tag q1 q2 q3`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut scenarios = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ScenarioParse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(err("expected `name tag q1 q2 ...`".into()));
            }
            let tag = match fields[1] {
                "train" => ScenarioTag::Train,
                "test" => ScenarioTag::Test,
                other => return Err(err(format!("unknown tag {other:?}"))),
            };
            let q = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad joint value {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            scenarios.push(Scenario {
                name: fields[0].to_string(),
                tag,
                q,
            });
        }
        Ok(ScenarioSet { scenarios })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SCENARIOS).expect("bundled scenario file parses")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# name tag joint angles (rad)\n");
        for sc in &self.scenarios {
            let tag = match sc.tag {
                ScenarioTag::Train => "train",
                ScenarioTag::Test => "test",
            };
            let _ = write!(s, "{} {}", sc.name, tag);
            for q in &sc.q {
                let _ = write!(s, " {q:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn with_tag(&self, tag: ScenarioTag) -> Vec<&Scenario> {
        self.scenarios.iter().filter(|s| s.tag == tag).collect()
    }

    /// Every scenario must be within limits, collision-free and entangled.
    pub fn validate(&self, arm: &ArmConfig, shapes: &Shapes) -> Result<()> {
        for sc in &self.scenarios {
            check_len("scenario joints", arm.n_joints(), sc.q.len())?;
            if sc.q.iter().any(|q| q.abs() > arm.joint_limit) {
                return Err(Error::InvalidState(format!("scenario {} exceeds joint limits", sc.name)));
            }
            if collides(arm, shapes, &sc.q)? {
                return Err(Error::InvalidState(format!("scenario {} starts in collision", sc.name)));
            }
            if object_distance(arm, shapes, &sc.q)? >= shapes.success_distance {
                return Err(Error::InvalidState(format!("scenario {} is not entangled", sc.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisentangleConfig {
    pub arm: ArmConfig,
    pub shapes: Shapes,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        DisentangleConfig {
            arm: ArmConfig::default(),
            shapes: Shapes::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisentangleEnv {
    config: Arc<DisentangleConfig>,
    ring: Vec<Segment>,
    /// Starting configurations sampled by the reset distribution.
    reset_set: Vec<Vec<f64>>,
    spec: EnvSpec,
    q: Option<Vec<f64>>,
    finished: bool,
    detect_success: bool,
    clock: usize,
}

impl DisentangleEnv {
    pub fn new(config: DisentangleConfig, reset_set: Vec<Vec<f64>>) -> Result<Self> {
        config.arm.validate()?;
        config.shapes.validate()?;
        if reset_set.is_empty() {
            return Err(Error::Config("the reset set must not be empty".into()));
        }
        let n = config.arm.n_joints();
        let lim = config.arm.joint_limit;
        let spec = EnvSpec {
            state_dim: n,
            action_dim: n,
            action_scale: vec![config.arm.max_joint_delta; n],
            horizon: config.arm.horizon,
            state_low: vec![-lim; n],
            state_high: vec![lim; n],
        };
        let ring = config.shapes.ring_segments();
        let env = DisentangleEnv {
            config: Arc::new(config),
            ring,
            reset_set,
            spec,
            q: None,
            finished: false,
            detect_success: true,
            clock: 0,
        };
        for q in &env.reset_set {
            env.check_state(q)?;
        }
        Ok(env)
    }

    /// Environment whose reset distribution is the training scenarios of `set`.
    pub fn with_training_set(config: DisentangleConfig, set: &ScenarioSet) -> Result<Self> {
        let starts = set
            .with_tag(ScenarioTag::Train)
            .into_iter()
            .map(|s| s.q.clone())
            .collect();
        Self::new(config, starts)
    }

    pub fn config(&self) -> &DisentangleConfig {
        &self.config
    }

    /// Reward and terminal for moving from `q` to `q_next` at step `t`.
    pub fn outcome(&self, q: &[f64], q_next: &[f64], scaled_action: &[f64], t: usize) -> (f64, Terminal) {
        let arm = &self.config.arm;
        if path_collides(arm, &self.config.shapes, &self.ring, q, q_next) {
            return (collision_penalty(arm.gamma, arm.horizon, t), Terminal::Collision);
        }
        let pose = fk(arm, &self.config.shapes, q_next).expect("joint count checked");
        let c = hook_centroid(&pose);
        let center = self.config.shapes.ring_center;
        let d = (c[0] - center[0]).hypot(c[1] - center[1]);
        if self.detect_success && d >= self.config.shapes.success_distance {
            return (1.0, Terminal::Success);
        }
        let norm = scaled_action.iter().map(|a| a * a).sum::<f64>().sqrt();
        (-norm, Terminal::None)
    }
}

impl Environment for DisentangleEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, mode: &ResetMode, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let q = match mode {
            ResetMode::ResetDistribution => {
                self.reset_set[rng.random_range(0..self.reset_set.len())].clone()
            }
            ResetMode::Explicit(q) => {
                self.check_state(q)?;
                q.clone()
            }
            ResetMode::Uniform => {
                return Err(Error::Contract(
                    "uniform resets are only defined for the maze".into(),
                ))
            }
        };
        self.q = Some(q.clone());
        self.finished = false;
        self.clock = 0;
        Ok(q)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let q = self
            .q
            .as_ref()
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        if self.finished {
            return Err(Error::Contract("step called after a terminal state".into()));
        }
        let delta = scale_action(&self.spec, action)?;
        let lim = self.config.arm.joint_limit;
        let q_next: Vec<f64> = q
            .iter()
            .zip(&delta)
            .map(|(q, d)| (q + d).clamp(-lim, lim))
            .collect();
        let (reward, terminal) = self.outcome(q, &q_next, &delta, self.clock);
        self.q = Some(q_next.clone());
        self.clock += 1;
        self.finished = terminal.is_terminal();
        Ok(StepResult {
            s_next: q_next,
            reward,
            terminal,
            timed_out: false,
        })
    }

    fn state(&self) -> Option<Vec<f64>> {
        self.q.clone()
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        check_len("joint state", self.config.arm.n_joints(), s.len())?;
        let lim = self.config.arm.joint_limit;
        if let Some(i) = s.iter().position(|q| !(q.abs() <= lim)) {
            return Err(Error::InvalidState(format!(
                "joint {i} = {} is outside [−{lim}, {lim}]",
                s[i]
            )));
        }
        Ok(())
    }

    fn set_success_detection(&mut self, enabled: bool) {
        self.detect_success = enabled;
    }

    fn clock(&self) -> usize {
        self.clock
    }

    fn restart_clock(&mut self) {
        self.clock = 0;
    }
}
