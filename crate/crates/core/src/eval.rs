//! Policy evaluation: uniform-start maze grids, scenario sets, run summaries,
//! heatmaps and the training exploration footprint.

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::disentangle::Scenario;
use crate::env::{Environment, ResetMode, Terminal};
use crate::error::{check_len, Error, Result};
use crate::maze::{Cell, MazeEnv, MazeGrid};
use crate::sac::SacAgent;

/// Anything that maps a state to an action in (−1, 1)^d.
pub trait Policy {
    fn action(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// The deterministic (squashed-mean) action.
impl Policy for SacAgent {
    fn action(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.act(s, true, &[])
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> Policy for F {
    fn action(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Undiscounted return.
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
}

/// Runs one episode of at most `horizon` steps from an explicit start.
pub fn rollout<E: Environment, P: Policy + ?Sized>(
    env: &mut E,
    policy: &P,
    start: &[f64],
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    let mut s = env.reset(&ResetMode::Explicit(start.to_vec()), rng)?;
    env.set_success_detection(true);
    let mut out = Rollout {
        ret: 0.0,
        success: false,
        steps: 0,
    };
    for _ in 0..horizon {
        let step = env.step(&policy.action(&s)?)?;
        out.ret += step.reward;
        out.steps += 1;
        s = step.s_next;
        if step.terminal.is_terminal() {
            out.success = step.terminal == Terminal::Success;
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub episodes: usize,
    pub mean_return: f64,
    /// Fraction of episodes that succeeded, in [0, 1].
    pub success_rate: f64,
}

/// Per-cell evaluation results; wall cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Option<CellStats>>,
}

impl EvalGrid {
    pub fn get(&self, col: usize, row: usize) -> Option<&CellStats> {
        self.cells[row * self.width + col].as_ref()
    }

    /// Success over all evaluated episodes, in [0, 1].
    pub fn success_rate(&self) -> f64 {
        let (mut wins, mut total) = (0.0, 0usize);
        for c in self.cells.iter().flatten() {
            wins += c.success_rate * c.episodes as f64;
            total += c.episodes;
        }
        if total == 0 {
            0.0
        } else {
            wins / total as f64
        }
    }

    pub fn mean_return(&self) -> f64 {
        let (mut sum, mut total) = (0.0, 0usize);
        for c in self.cells.iter().flatten() {
            sum += c.mean_return * c.episodes as f64;
            total += c.episodes;
        }
        if total == 0 {
            0.0
        } else {
            sum / total as f64
        }
    }

    pub const CSV_HEADER: &'static str = "col,row,kind,episodes,mean_return,success_rate";

    /// One line per cell in row-major order; wall cells have empty statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in 0..self.height {
            for col in 0..self.width {
                match self.get(col, row) {
                    Some(c) => writeln!(
                        out,
                        "{col},{row},free,{},{:?},{:?}",
                        c.episodes, c.mean_return, c.success_rate
                    ),
                    None => writeln!(out, "{col},{row},wall,,,"),
                }
                .expect("writing to a String cannot fail");
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::GridParse {
            line,
            message: message.to_string(),
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 fields"));
            }
            let col: usize = f[0].parse().map_err(|_| bad(i + 1, "bad column"))?;
            let row: usize = f[1].parse().map_err(|_| bad(i + 1, "bad row"))?;
            let stats = match f[2] {
                "wall" => None,
                "free" => Some(CellStats {
                    episodes: f[3].parse().map_err(|_| bad(i + 1, "bad episode count"))?,
                    mean_return: f[4].parse().map_err(|_| bad(i + 1, "bad mean return"))?,
                    success_rate: f[5].parse().map_err(|_| bad(i + 1, "bad success rate"))?,
                }),
                _ => return Err(bad(i + 1, "kind must be `free` or `wall`")),
            };
            entries.push((col, row, stats));
        }
        let width = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let height = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if width * height != entries.len() || width == 0 {
            return Err(bad(0, "cells do not form a complete rectangle"));
        }
        let mut cells = vec![None; width * height];
        let mut seen = vec![false; width * height];
        for (col, row, stats) in entries {
            let k = row * width + col;
            if seen[k] {
                return Err(bad(0, "duplicate cell"));
            }
            seen[k] = true;
            cells[k] = stats;
        }
        Ok(EvalGrid { width, height, cells })
    }

    /// ASCII portable graymap of per-cell mean return: min → 0, max → 255,
    /// walls 0, and every free cell 255 when all means are equal.
    pub fn to_pgm(&self) -> String {
        let means: Vec<f64> = self.cells.iter().flatten().map(|c| c.mean_return).collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width)
                .map(|col| match self.get(col, row) {
                    None => 0,
                    Some(_) if hi <= lo => 255,
                    Some(c) => (255.0 * (c.mean_return - lo) / (hi - lo)).round() as u8,
                })
                .map(|p| p.to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Runs `n_per_cell` episodes from uniform positions inside every open
/// cell, in row-major cell order.
pub fn evaluate_uniform<P: Policy + ?Sized>(
    env: &mut MazeEnv,
    policy: &P,
    n_per_cell: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalGrid> {
    if n_per_cell == 0 {
        return Err(Error::Config("n_per_cell must be positive".into()));
    }
    let grid = env.shared_grid();
    if grid.open_cells().is_empty() {
        return Err(Error::Config("the maze has no free cells".into()));
    }
    let horizon = env.config().horizon;
    let mut cells = vec![None; grid.width() * grid.height()];
    for (col, row) in grid.open_cells() {
        let (mut ret, mut wins) = (0.0, 0usize);
        for _ in 0..n_per_cell {
            let start = MazeEnv::point_in_cell(rng, (col, row));
            let r = rollout(env, policy, &start, horizon, rng)?;
            ret += r.ret;
            wins += r.success as usize;
        }
        cells[row * grid.width() + col] = Some(CellStats {
            episodes: n_per_cell,
            mean_return: ret / n_per_cell as f64,
            success_rate: wins as f64 / n_per_cell as f64,
        });
    }
    Ok(EvalGrid {
        width: grid.width(),
        height: grid.height(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub trials: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Evaluation of one policy over a scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub scenarios: Vec<ScenarioResult>,
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

pub fn evaluate_scenarios<E: Environment, P: Policy + ?Sized>(
    env: &mut E,
    policy: &P,
    scenarios: &[&Scenario],
    trials_per_scenario: usize,
    rng: &mut dyn RngCore,
) -> Result<ScenarioEval> {
    if scenarios.is_empty() {
        return Err(Error::Config("the scenario set is empty".into()));
    }
    if trials_per_scenario == 0 {
        return Err(Error::Config("trials_per_scenario must be positive".into()));
    }
    let horizon = env.spec().horizon;
    let mut results = Vec::with_capacity(scenarios.len());
    let (mut ret, mut wins) = (0.0, 0usize);
    for sc in scenarios {
        let (mut r_sum, mut w) = (0.0, 0usize);
        for _ in 0..trials_per_scenario {
            let r = rollout(env, policy, &sc.q, horizon, rng)?;
            r_sum += r.ret;
            w += r.success as usize;
        }
        ret += r_sum;
        wins += w;
        results.push(ScenarioResult {
            name: sc.name.clone(),
            trials: trials_per_scenario,
            mean_return: r_sum / trials_per_scenario as f64,
            success_rate: w as f64 / trials_per_scenario as f64,
        });
    }
    let episodes = scenarios.len() * trials_per_scenario;
    Ok(ScenarioEval {
        scenarios: results,
        episodes,
        mean_return: ret / episodes as f64,
        success_rate: wins as f64 / episodes as f64,
    })
}

/// Mean and standard error of a statistic across independent runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`; 0 for a single run.
    pub stderr: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Config("no values to summarize".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Ok(Estimate { mean, stderr: 0.0 });
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Estimate {
            mean,
            stderr: var.sqrt() / (n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub mean_return: Estimate,
    /// Success rate in percent.
    pub success: Estimate,
    /// Set when `runs == 1`, so the zero standard errors are not mistaken
    /// for a measurement.
    pub single_run: bool,
}

impl MethodSummary {
    /// `success_rates` are fractions in [0, 1], one per run.
    pub fn from_runs(method: &str, returns: &[f64], success_rates: &[f64]) -> Result<Self> {
        if returns.len() != success_rates.len() {
            return Err(Error::dim("per-run success rates", returns.len(), success_rates.len()));
        }
        let pct: Vec<f64> = success_rates.iter().map(|s| 100.0 * s).collect();
        Ok(MethodSummary {
            method: method.to_string(),
            runs: returns.len(),
            mean_return: Estimate::of(returns)?,
            success: Estimate::of(&pct)?,
            single_run: returns.len() == 1,
        })
    }

    pub const CSV_HEADER: &'static str =
        "method,runs,mean_return,return_stderr,success_pct,success_stderr,single_run";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{}",
            self.method,
            self.runs,
            self.mean_return.mean,
            self.mean_return.stderr,
            self.success.mean,
            self.success.stderr,
            self.single_run
        )
    }
}

/// Per-cell visit counts of the states recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    width: usize,
    open: Vec<bool>,
    counts: Vec<u64>,
}

impl Footprint {
    pub fn new(grid: &MazeGrid) -> Self {
        let open = (0..grid.height())
            .flat_map(|r| (0..grid.width()).map(move |c| (c, r)))
            .map(|(c, r)| grid.cell(c, r) != Cell::Wall)
            .collect::<Vec<_>>();
        Footprint {
            width: grid.width(),
            counts: vec![0; open.len()],
            open,
        }
    }

    /// Resumes counting from row-major `counts` saved earlier.
    pub fn with_counts(grid: &MazeGrid, counts: Vec<u64>) -> Result<Self> {
        let mut f = Self::new(grid);
        check_len("footprint counts", f.counts.len(), counts.len())?;
        f.counts = counts;
        Ok(f)
    }

    pub fn visit(&mut self, s: &[f64]) {
        if s.len() < 2 || !(s[0] >= 0.0 && s[1] >= 0.0) {
            return;
        }
        let (c, r) = (s[0].floor() as usize, s[1].floor() as usize);
        let i = r * self.width + c;
        if c < self.width && i < self.open.len() && self.open[i] {
            self.counts[i] += 1;
        }
    }

    /// Row-major visit counts, walls included (always zero).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn visits(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.width + col]
    }

    pub fn visited_cells(&self) -> usize {
        self.counts
            .iter()
            .zip(&self.open)
            .filter(|(n, o)| **n > 0 && **o)
            .count()
    }

    /// Visited open cells over all open cells.
    pub fn fraction(&self) -> f64 {
        let open = self.open.iter().filter(|o| **o).count();
        if open == 0 {
            0.0
        } else {
            self.visited_cells() as f64 / open as f64
        }
    }
}

#[cfg(test)]
mod tests;
