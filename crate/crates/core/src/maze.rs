//! Continuous 2-D maze: a point agent with velocity actions capped at one
//! cell per step, sliding along walls, rewarded for reaching the goal.
//!
//! Coordinates: `x` is the column and `y` the row of the text layout (row 0
//! is the first line). Cell `(c, r)` covers `[c, c+1) × [r, r+1)`.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{scale_action, EnvSpec, Environment, ResetMode, StepResult, Terminal};
use crate::error::{check_len, Error, Result};

/// Maximum distance between collision probes along a swept move.
pub const SWEEP_INTERVAL: f64 = 0.25;

const BUNDLED_LAYOUT: &str = include_str!("../data/maze10.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Free,
    Goal,
    Reset,
}

impl Cell {
    fn from_char(c: char) -> Option<Cell> {
        match c {
            '#' => Some(Cell::Wall),
            '.' => Some(Cell::Free),
            'G' => Some(Cell::Goal),
            'R' => Some(Cell::Reset),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Free => '.',
            Cell::Goal => 'G',
            Cell::Reset => 'R',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MazeParseError {
    #[error("maze layout is empty")]
    Empty,
    #[error("row {row} has width {got}, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("unknown character {ch:?} at row {row}, column {col}")]
    UnknownChar { row: usize, col: usize, ch: char },
    #[error("maze has no goal cell 'G'")]
    MissingGoal,
    #[error("maze has no reset cell 'R'")]
    MissingReset,
    #[error("boundary cell at row {row}, column {col} is not a wall")]
    OpenBoundary { row: usize, col: usize },
    #[error("no goal cell is reachable from the reset cell at row {row}, column {col}")]
    UnreachableGoal { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeGrid {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl MazeGrid {
    /// Parses `#` wall, `.` free, `G` goal, `R` reset. Blank trailing lines are ignored.
    pub fn parse(text: &str) -> std::result::Result<Self, MazeParseError> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(MazeParseError::Empty);
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (row, line) in rows.iter().enumerate() {
            let got = line.chars().count();
            if got != width {
                return Err(MazeParseError::Ragged {
                    row,
                    expected: width,
                    got,
                });
            }
            for (col, ch) in line.chars().enumerate() {
                cells.push(Cell::from_char(ch).ok_or(MazeParseError::UnknownChar { row, col, ch })?);
            }
        }
        let grid = MazeGrid {
            width,
            height,
            cells,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LAYOUT).expect("bundled maze layout is valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED_LAYOUT
    }

    fn validate(&self) -> std::result::Result<(), MazeParseError> {
        if !self.cells.contains(&Cell::Goal) {
            return Err(MazeParseError::MissingGoal);
        }
        if !self.cells.contains(&Cell::Reset) {
            return Err(MazeParseError::MissingReset);
        }
        for row in 0..self.height {
            for col in 0..self.width {
                let edge = row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width;
                if edge && self.cell(col, row) != Cell::Wall {
                    return Err(MazeParseError::OpenBoundary { row, col });
                }
            }
        }
        for (col, row) in self.cells_of(Cell::Reset) {
            let dist = self.distances_from(col, row);
            let reachable = self
                .cells_of(Cell::Goal)
                .iter()
                .any(|&(c, r)| dist[r * self.width + c].is_some());
            if !reachable {
                return Err(MazeParseError::UnreachableGoal { row, col });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, col: usize, row: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    /// Cell containing a continuous point, `None` outside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        self.cell_index(x, y).map(|(c, r)| self.cell(c, r))
    }

    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (c, r) = (x.floor() as usize, y.floor() as usize);
        (c < self.width && r < self.height).then_some((c, r))
    }

    pub fn is_open(&self, x: f64, y: f64) -> bool {
        matches!(self.cell_at(x, y), Some(c) if c != Cell::Wall)
    }

    pub fn cells_of(&self, kind: Cell) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (c, r)))
            .filter(|&(c, r)| self.cell(c, r) == kind)
            .collect()
    }

    /// All non-wall cells in row-major order.
    pub fn open_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (c, r)))
            .filter(|&(c, r)| self.cell(c, r) != Cell::Wall)
            .collect()
    }

    /// Breadth-first cell distances over 4-connected open cells.
    pub fn distances_from(&self, col: usize, row: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.cells.len()];
        if self.cell(col, row) == Cell::Wall {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[row * self.width + col] = Some(0);
        queue.push_back((col, row));
        while let Some((c, r)) = queue.pop_front() {
            let d = dist[r * self.width + c].unwrap();
            let neighbours = [
                (c.wrapping_sub(1), r),
                (c + 1, r),
                (c, r.wrapping_sub(1)),
                (c, r + 1),
            ];
            for (nc, nr) in neighbours {
                if nc < self.width && nr < self.height {
                    let i = nr * self.width + nc;
                    if dist[i].is_none() && self.cells[i] != Cell::Wall {
                        dist[i] = Some(d + 1);
                        queue.push_back((nc, nr));
                    }
                }
            }
        }
        dist
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(self.cell(c, r).to_char());
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    /// Cells per step.
    pub max_speed: f64,
    pub step_penalty_coeff: f64,
    pub goal_reward: f64,
    pub horizon: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            max_speed: 1.0,
            step_penalty_coeff: 0.05,
            goal_reward: 1.0,
            horizon: 100,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_speed)
            || !positive(self.step_penalty_coeff)
            || !positive(self.goal_reward)
            || self.horizon == 0
        {
            return Err(Error::Config("maze parameters must all be positive".into()));
        }
        Ok(())
    }
}

/// Rescales `a` onto the disc of radius `max_speed` when it is longer.
pub fn cap_action(a: [f64; 2], max_speed: f64) -> [f64; 2] {
    let norm = a[0].hypot(a[1]);
    if norm <= max_speed {
        a
    } else {
        let k = max_speed / norm;
        [a[0] * k, a[1] * k]
    }
}

/// Moves along x, then along y. A component whose swept path touches a wall
/// cell is dropped entirely.
pub fn move_with_slide(grid: &MazeGrid, s: [f64; 2], delta: [f64; 2]) -> [f64; 2] {
    let mut pos = s;
    for axis in 0..2 {
        let d = delta[axis];
        if d == 0.0 {
            continue;
        }
        let probes = (d.abs() / SWEEP_INTERVAL).ceil().max(1.0) as usize;
        let target = pos[axis] + d;
        let blocked = (1..=probes).any(|k| {
            let mut p = pos;
            p[axis] = if k == probes {
                target
            } else {
                pos[axis] + d * k as f64 / probes as f64
            };
            !grid.is_open(p[0], p[1])
        });
        if !blocked {
            pos[axis] = target;
        }
    }
    pos
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeTransition {
    pub s_next: [f64; 2],
    pub applied: [f64; 2],
    pub reward: f64,
    pub terminal: Terminal,
}

/// One maze transition for an action already in environment units.
pub fn maze_step(
    grid: &MazeGrid,
    config: &MazeConfig,
    s: [f64; 2],
    delta: [f64; 2],
    detect_success: bool,
) -> MazeTransition {
    let capped = cap_action(delta, config.max_speed);
    let s_next = move_with_slide(grid, s, capped);
    let applied = [s_next[0] - s[0], s_next[1] - s[1]];
    if detect_success && grid.cell_at(s_next[0], s_next[1]) == Some(Cell::Goal) {
        MazeTransition {
            s_next,
            applied,
            reward: config.goal_reward,
            terminal: Terminal::Success,
        }
    } else {
        MazeTransition {
            s_next,
            applied,
            reward: -config.step_penalty_coeff * applied[0].hypot(applied[1]),
            terminal: Terminal::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    grid: Arc<MazeGrid>,
    config: MazeConfig,
    spec: EnvSpec,
    pos: Option<[f64; 2]>,
    finished: bool,
    detect_success: bool,
    clock: usize,
}

impl MazeEnv {
    pub fn new(grid: Arc<MazeGrid>, config: MazeConfig) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec {
            state_dim: 2,
            action_dim: 2,
            action_scale: vec![config.max_speed; 2],
            horizon: config.horizon,
            state_low: vec![0.0, 0.0],
            state_high: vec![grid.width() as f64, grid.height() as f64],
        };
        Ok(MazeEnv {
            grid,
            config,
            spec,
            pos: None,
            finished: false,
            detect_success: true,
            clock: 0,
        })
    }

    pub fn grid(&self) -> &MazeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<MazeGrid> {
        Arc::clone(&self.grid)
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    /// Uniform point inside cell `(col, row)`.
    pub fn point_in_cell(rng: &mut dyn RngCore, (c, r): (usize, usize)) -> Vec<f64> {
        vec![c as f64 + rng.random::<f64>(), r as f64 + rng.random::<f64>()]
    }
}

impl Environment for MazeEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, mode: &ResetMode, mut rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let s = match mode {
            ResetMode::ResetDistribution => {
                let cells = self.grid.cells_of(Cell::Reset);
                let cell = cells[rng.random_range(0..cells.len())];
                Self::point_in_cell(&mut rng, cell)
            }
            ResetMode::Uniform => {
                let cells = self.grid.open_cells();
                let cell = cells[rng.random_range(0..cells.len())];
                Self::point_in_cell(&mut rng, cell)
            }
            ResetMode::Explicit(s) => {
                self.check_state(s)?;
                s.clone()
            }
        };
        self.pos = Some([s[0], s[1]]);
        self.finished = false;
        self.clock = 0;
        Ok(s)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let pos = self
            .pos
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        if self.finished {
            return Err(Error::Contract("step called after a terminal state".into()));
        }
        let delta = scale_action(&self.spec, action)?;
        let t = maze_step(
            &self.grid,
            &self.config,
            pos,
            [delta[0], delta[1]],
            self.detect_success,
        );
        self.pos = Some(t.s_next);
        self.clock += 1;
        self.finished = t.terminal.is_terminal();
        Ok(StepResult {
            s_next: t.s_next.to_vec(),
            reward: t.reward,
            terminal: t.terminal,
            timed_out: false,
        })
    }

    fn state(&self) -> Option<Vec<f64>> {
        self.pos.map(|p| p.to_vec())
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        check_len("maze state", 2, s.len())?;
        match self.grid.cell_at(s[0], s[1]) {
            None => Err(Error::InvalidState(format!(
                "({}, {}) lies outside the maze",
                s[0], s[1]
            ))),
            Some(Cell::Wall) => Err(Error::InvalidState(format!(
                "({}, {}) lies inside a wall cell",
                s[0], s[1]
            ))),
            Some(_) => Ok(()),
        }
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
