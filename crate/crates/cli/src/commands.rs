//! The `train`, `sweep`, `eval` and `compare` commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arl_core::arl::{AdversaryKind, Phase, Termination, Trainer, METRICS_HEADER};
use arl_core::disentangle::ScenarioTag;
use arl_core::env::Environment;
use arl_core::eval::{evaluate_scenarios, evaluate_uniform, Footprint, MethodSummary};
use arl_core::maze::{Cell, MazeGrid};
use arl_core::sac::SacAgent;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::envs::AnyEnv;
use crate::ConfigError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VISITS_FILE: &str = "visits.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Training-tail statistics cover this many final protagonist-phase episodes.
pub const TAIL_EPISODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub method: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStat {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub config_hash: String,
    pub iterations: usize,
    pub episodes: u64,
    /// Final protagonist-phase training episodes (stochastic policy).
    pub training_tail: EvalStat,
    /// Fraction of free maze cells visited by any training state.
    pub footprint: Option<f64>,
    /// Fraction of free maze cells in which a protagonist segment started.
    pub handoff_footprint: Option<f64>,
    /// Deterministic-policy evaluations keyed by name (`uniform`, `train`, `test`).
    pub evaluations: BTreeMap<String, EvalStat>,
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

fn io_context(path: &Path) -> String {
    format!("writing {}", path.display())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| io_context(path))
}

fn maze_grid(env: &AnyEnv) -> Option<&MazeGrid> {
    match env {
        AnyEnv::Maze(m) => Some(m.grid()),
        AnyEnv::Disentangle(_) => None,
    }
}

/// Trains one run into `out_root/<run dir>`; with `resume`, continues from a
/// checkpoint of the same configuration.
pub fn train(cfg: &RunConfig, out_root: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let env = cfg.build_env()?;
    let dir = out_root.join(cfg.run_dir_name());
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).with_context(|| io_context(&dir))?;
    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        method: cfg.method(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
    };
    write_file(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;

    let grid = maze_grid(&env).cloned();
    let metrics_path = dir.join(METRICS_FILE);
    let (mut trainer, mut visits, mut handoffs) = match resume {
        None => {
            write_file(&metrics_path, &format!("{METRICS_HEADER}\n"))?;
            let trainer = Trainer::new(env, cfg.arl.clone(), cfg.protagonist.clone(), cfg.adversary.clone(), cfg.seed)?;
            let fresh = grid.as_ref().map(Footprint::new);
            (trainer, fresh.clone(), fresh)
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config != *cfg {
                return Err(ConfigError(format!(
                    "checkpoint {} was written by a different configuration (hash {} vs {})",
                    path.display(),
                    ck.config.hash(),
                    cfg.hash()
                ))
                .into());
            }
            truncate_metrics(&metrics_path, ck.snapshot.episodes_done)?;
            let restore = |counts: Vec<u64>| grid.as_ref().map(|g| Footprint::with_counts(g, counts)).transpose();
            let visits = restore(ck.visits)?;
            let handoffs = restore(ck.handoff_visits)?;
            (Trainer::restore(env, ck.snapshot)?, visits, handoffs)
        }
    };

    let file = fs::OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .with_context(|| io_context(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    let total = trainer.config().iterations;
    let report_every = (total / 20).max(1);
    let mut recent = (0usize, 0usize);
    while !trainer.is_finished() {
        let mut write_err = None;
        trainer.run_iteration(&mut |r| {
            if let Err(e) = writeln!(metrics, "{}", r.csv_row()) {
                write_err.get_or_insert(e);
            }
            if let Some(v) = visits.as_mut() {
                r.states.iter().for_each(|s| v.visit(s));
            }
            if r.phase == Phase::P {
                if let Some(h) = handoffs.as_mut() {
                    h.visit(&r.handoff_state);
                }
                recent.0 += 1;
                recent.1 += (r.termination == Termination::Success) as usize;
            }
            Ok(())
        })?;
        if let Some(e) = write_err {
            return Err(anyhow::Error::new(e).context(io_context(&metrics_path)));
        }
        let done = trainer.iterations_done();
        if done % report_every == 0 || trainer.is_finished() {
            log::info!(
                "{}: iteration {done}/{total}, protagonist-phase success {:.2}{}",
                cfg.method(),
                recent.1 as f64 / recent.0.max(1) as f64,
                visits.as_ref().map(|v| format!(", footprint {:.2}", v.fraction())).unwrap_or_default()
            );
            recent = (0, 0);
        }
        let periodic = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if periodic || trainer.is_finished() {
            metrics.flush().with_context(|| io_context(&metrics_path))?;
            let ck = Checkpoint {
                config: cfg.clone(),
                snapshot: trainer.snapshot(),
                visits: visits.as_ref().map(|v| v.counts().to_vec()).unwrap_or_default(),
                handoff_visits: handoffs.as_ref().map(|v| v.counts().to_vec()).unwrap_or_default(),
            };
            if periodic {
                ck.save(&dir.join(CHECKPOINT_DIR).join(format!("iter_{done:06}.ckpt")))?;
            }
            if trainer.is_finished() {
                ck.save(&dir.join(FINAL_CHECKPOINT))?;
            }
        }
    }
    metrics.flush().with_context(|| io_context(&metrics_path))?;
    drop(metrics);

    if let (Some(g), Some(v), Some(h)) = (grid.as_ref(), visits.as_ref(), handoffs.as_ref()) {
        write_file(&dir.join(VISITS_FILE), &visits_csv(g, v, h))?;
    }
    let mut eval_env = cfg.build_env()?;
    let evaluations = evaluate(cfg, &mut eval_env, trainer.protagonist(), &dir, cfg.eval.seed)?;
    let summary = RunSummary {
        method: cfg.method(),
        env: cfg.env.name().into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        iterations: trainer.iterations_done(),
        episodes: trainer.log().episodes,
        training_tail: training_tail(&metrics_path, TAIL_EPISODES)?,
        footprint: visits.as_ref().map(Footprint::fraction),
        handoff_footprint: handoffs.as_ref().map(Footprint::fraction),
        evaluations,
    };
    write_file(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    Ok(TrainOutcome { dir, summary })
}

/// Keeps the header and the first `episodes` rows of an existing metrics file.
fn truncate_metrics(path: &Path, episodes: u64) -> Result<()> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut kept = String::new();
    let mut lines = BufReader::new(file).lines();
    for i in 0..=episodes {
        match lines.next() {
            Some(line) => {
                kept.push_str(&line?);
                kept.push('\n');
            }
            None => bail!(
                "{} has only {} episode rows, the checkpoint needs {episodes}",
                path.display(),
                i.saturating_sub(1)
            ),
        }
    }
    write_file(path, &kept)
}

/// Success rate and mean protagonist return over the last `n` phase-P rows.
pub fn training_tail(metrics: &Path, n: usize) -> Result<EvalStat> {
    let text = fs::read_to_string(metrics).with_context(|| format!("reading {}", metrics.display()))?;
    let header: Vec<&str> = METRICS_HEADER.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).expect("known column");
    let (phase, ret, term) = (col("phase"), col("protagonist_return"), col("termination"));
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f.get(phase) == Some(&"P"))
        .collect();
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return Ok(EvalStat {
            episodes: 0,
            mean_return: 0.0,
            success_rate: 0.0,
        });
    }
    let mut total = 0.0;
    let mut wins = 0usize;
    for f in tail {
        total += f[ret].parse::<f64>().context("metrics return column")?;
        wins += (f[term] == Termination::Success.as_str()) as usize;
    }
    Ok(EvalStat {
        episodes: tail.len(),
        mean_return: total / tail.len() as f64,
        success_rate: wins as f64 / tail.len() as f64,
    })
}

fn visits_csv(grid: &MazeGrid, visits: &Footprint, handoffs: &Footprint) -> String {
    let mut out = String::from("col,row,kind,visits,handoffs\n");
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            let kind = match grid.cell(col, row) {
                Cell::Wall => continue,
                Cell::Free => "free",
                Cell::Goal => "goal",
                Cell::Reset => "reset",
            };
            let _ = writeln!(out, "{col},{row},{kind},{},{}", visits.visits(col, row), handoffs.visits(col, row));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Uniform,
    Scenarios,
}

/// Runs the evaluations that apply to the configured environment and writes
/// their files into `dir`.
fn evaluate(cfg: &RunConfig, env: &mut AnyEnv, agent: &SacAgent, dir: &Path, seed: u64) -> Result<BTreeMap<String, EvalStat>> {
    let mode = match env {
        AnyEnv::Maze(_) => EvalMode::Uniform,
        AnyEnv::Disentangle(_) => EvalMode::Scenarios,
    };
    evaluate_mode(cfg, env, agent, mode, dir, seed)
}

fn evaluate_mode(
    cfg: &RunConfig,
    env: &mut AnyEnv,
    agent: &SacAgent,
    mode: EvalMode,
    dir: &Path,
    seed: u64,
) -> Result<BTreeMap<String, EvalStat>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    match (mode, env) {
        (EvalMode::Uniform, AnyEnv::Maze(maze)) => {
            let grid = evaluate_uniform(maze, agent, cfg.eval.n_per_cell, &mut rng)?;
            write_file(&dir.join("eval_grid.csv"), &grid.to_csv())?;
            write_file(&dir.join("heatmap.pgm"), &grid.to_pgm())?;
            let episodes = grid.cells.iter().flatten().map(|c| c.episodes).sum();
            out.insert(
                "uniform".into(),
                EvalStat {
                    episodes,
                    mean_return: grid.mean_return(),
                    success_rate: grid.success_rate(),
                },
            );
        }
        (EvalMode::Scenarios, env @ AnyEnv::Disentangle(_)) => {
            let set = cfg.scenarios()?.expect("disentangle config has scenarios");
            let mut csv = String::from("set,scenario,trials,mean_return,success_rate\n");
            for (name, tag) in [("train", ScenarioTag::Train), ("test", ScenarioTag::Test)] {
                let scenarios = set.with_tag(tag);
                if scenarios.is_empty() {
                    continue;
                }
                let e = evaluate_scenarios(env, agent, &scenarios, cfg.eval.trials_per_scenario, &mut rng)?;
                for s in &e.scenarios {
                    let _ = writeln!(csv, "{name},{},{},{:?},{:?}", s.name, s.trials, s.mean_return, s.success_rate);
                }
                out.insert(
                    name.into(),
                    EvalStat {
                        episodes: e.episodes,
                        mean_return: e.mean_return,
                        success_rate: e.success_rate,
                    },
                );
            }
            write_file(&dir.join("scenarios.csv"), &csv)?;
        }
        (EvalMode::Uniform, _) => {
            return Err(ConfigError("uniform evaluation is only defined for the maze".into()).into())
        }
        (EvalMode::Scenarios, _) => {
            return Err(ConfigError("scenario evaluation is only defined for disentangle2d".into()).into())
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub method: String,
    pub seed: u64,
    pub evaluations: BTreeMap<String, EvalStat>,
}

/// Evaluates the protagonist of a checkpoint. `env_cfg` replaces the
/// environment stored in the checkpoint when given.
pub fn eval(checkpoint: &Path, mode: EvalMode, out: &Path, seed: Option<u64>, env_cfg: Option<&RunConfig>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(c) = env_cfg {
        cfg.env = c.env.clone();
        cfg.eval = c.eval.clone();
    }
    let mut env = cfg.build_env()?;
    let agent = &ck.snapshot.protagonist;
    let spec = env.spec();
    if spec.state_dim != agent.state_dim || spec.action_dim != agent.action_dim {
        return Err(ConfigError(format!(
            "checkpoint agent has state/action dimensions {}/{} but the {} environment has {}/{}",
            agent.state_dim,
            agent.action_dim,
            cfg.env.name(),
            spec.state_dim,
            spec.action_dim
        ))
        .into());
    }
    fs::create_dir_all(out).with_context(|| io_context(out))?;
    let seed = seed.unwrap_or(cfg.eval.seed);
    let evaluations = evaluate_mode(&cfg, &mut env, agent, mode, out, seed)?;
    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        method: cfg.method(),
        seed,
        evaluations,
    };
    write_file(&out.join("eval_summary.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// One sweep dimension: a parameter name and the values it takes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("axis {s:?} is not of the form name=v1,v2,...")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(ConfigError(format!("axis {s:?} has an empty value")));
        }
        if !["k", "k_a", "k_p", "h_a", "seed", "adversary_kind"].contains(&name) {
            return Err(ConfigError(format!(
                "unknown sweep axis {name:?} (expected k, k_a, k_p, h_a, seed or adversary_kind)"
            )));
        }
        Ok(Axis {
            name: name.to_string(),
            values,
        })
    }
}

fn parse_axis_value<T: std::str::FromStr>(axis: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| ConfigError(format!("sweep axis {axis}: cannot parse {v:?}")).into())
}

/// Expands the cartesian product of `axes` over `base`, holding the episode
/// budget constant so the iteration count follows from `k_a + k_p`.
pub fn sweep_configs(base: &RunConfig, axes: &[Axis]) -> Result<Vec<RunConfig>> {
    if base.episodes.is_none() {
        return Err(ConfigError("a sweep needs an episode budget (episodes)".into()).into());
    }
    let mut points = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for v in &axis.values {
                let mut c = p.clone();
                match axis.name.as_str() {
                    "k" => {
                        let k = parse_axis_value(&axis.name, v)?;
                        c.arl.k_a = k;
                        c.arl.k_p = k;
                    }
                    "k_a" => c.arl.k_a = parse_axis_value(&axis.name, v)?,
                    "k_p" => c.arl.k_p = parse_axis_value(&axis.name, v)?,
                    "h_a" => c.arl.h_a = parse_axis_value(&axis.name, v)?,
                    "seed" => c.seed = parse_axis_value(&axis.name, v)?,
                    _ => {
                        c.arl.adversary_kind = serde_json::from_value(serde_json::Value::String(v.clone()))
                            .map_err(|_| ConfigError(format!("unknown adversary kind {v:?}")))?;
                    }
                }
                next.push(c);
            }
        }
        points = next;
    }
    let labels_h_a = base.name.is_none() && axes.iter().any(|a| a.name == "h_a");
    for c in &mut points {
        if c.arl.adversary_kind == AdversaryKind::None {
            c.arl.h_a = 0;
        } else if labels_h_a {
            c.name = Some(format!("{}_h{}", c.method(), c.arl.h_a));
        }
        c.resolve()?;
    }
    let mut seen = std::collections::HashSet::new();
    points.retain(|c| seen.insert(c.hash()));
    Ok(points)
}

pub fn sweep(base: &RunConfig, axes: &[Axis], out_root: &Path) -> Result<Vec<TrainOutcome>> {
    let configs = sweep_configs(base, axes)?;
    log::info!("sweep: {} runs", configs.len());
    configs.iter().map(|c| train(c, out_root, None)).collect()
}

/// Per-method statistics over the runs given to `compare`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Evaluation name to one summary per method, sorted by method name.
    pub tables: BTreeMap<String, Vec<MethodSummary>>,
    /// Method to (mean, stderr, runs) of the training footprint.
    pub footprints: BTreeMap<String, (f64, f64, usize)>,
    pub skipped: Vec<PathBuf>,
}

pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    let mut by_method: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for d in dirs {
        match load_summary(d) {
            Ok(s) => by_method.entry(s.method.clone()).or_default().push(s),
            Err(e) => {
                log::warn!("skipping {}: {e:#}", d.display());
                skipped.push(d.clone());
            }
        }
    }
    if by_method.is_empty() {
        return Err(ConfigError("no run directory contained a summary".into()).into());
    }
    let mut tables: BTreeMap<String, Vec<MethodSummary>> = BTreeMap::new();
    let mut footprints = BTreeMap::new();
    for (method, runs) in &by_method {
        let names: std::collections::BTreeSet<&String> = runs.iter().flat_map(|r| r.evaluations.keys()).collect();
        for name in names {
            let stats: Vec<&EvalStat> = runs.iter().filter_map(|r| r.evaluations.get(name)).collect();
            let returns: Vec<f64> = stats.iter().map(|s| s.mean_return).collect();
            let success: Vec<f64> = stats.iter().map(|s| s.success_rate).collect();
            tables
                .entry(name.clone())
                .or_default()
                .push(MethodSummary::from_runs(method, &returns, &success)?);
        }
        let fp: Vec<f64> = runs.iter().filter_map(|r| r.footprint).collect();
        if !fp.is_empty() {
            let e = arl_core::eval::Estimate::of(&fp)?;
            footprints.insert(method.clone(), (e.mean, e.stderr, fp.len()));
        }
    }
    Ok(Comparison {
        tables,
        footprints,
        skipped,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!("evaluation,{}\n", MethodSummary::CSV_HEADER);
        for (name, rows) in &self.tables {
            for r in rows {
                let _ = writeln!(out, "{name},{}", r.csv_row());
            }
        }
        out
    }

    /// Aligned text tables; `*` marks the best mean in each column.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, rows) in &self.tables {
            let best_ret = rows.iter().map(|r| r.mean_return.mean).fold(f64::NEG_INFINITY, f64::max);
            let best_succ = rows.iter().map(|r| r.success.mean).fold(f64::NEG_INFINITY, f64::max);
            let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
            let _ = writeln!(out, "evaluation: {name}");
            let _ = writeln!(out, "{:<width$}  {:>4}  {:>20}  {:>18}", "method", "runs", "return", "success %");
            for r in rows {
                let flag = |v: f64, best: f64| if v == best { '*' } else { ' ' };
                let ret = format!("{:.3} ± {:.3}{}", r.mean_return.mean, r.mean_return.stderr, flag(r.mean_return.mean, best_ret));
                let succ = format!("{:.2} ± {:.2}{}", r.success.mean, r.success.stderr, flag(r.success.mean, best_succ));
                let _ = writeln!(out, "{:<width$}  {:>4}  {:>20}  {:>18}", r.method, r.runs, ret, succ);
            }
            out.push('\n');
        }
        if !self.footprints.is_empty() {
            let _ = writeln!(out, "training footprint (fraction of free cells)");
            for (method, (mean, se, n)) in &self.footprints {
                let _ = writeln!(out, "{method:<12}  {n:>4}  {mean:.3} ± {se:.3}");
            }
        }
        out
    }
}

pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<Comparison> {
    let c = compare_runs(dirs)?;
    fs::create_dir_all(out).with_context(|| io_context(out))?;
    write_file(&out.join("compare.csv"), &c.to_csv())?;
    write_file(&out.join("compare.txt"), &c.to_table())?;
    Ok(c)
}
