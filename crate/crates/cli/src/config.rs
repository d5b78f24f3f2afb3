//! Run configuration: a JSON document with dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use arl_core::arl::{AdversaryKind, ArlConfig};
use arl_core::disentangle::{DisentangleConfig, DisentangleEnv, ScenarioSet};
use arl_core::maze::{MazeConfig, MazeEnv, MazeGrid};
use arl_core::sac::SacConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::envs::AnyEnv;
use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Maze {
        /// ASCII layout file; the bundled maze when absent.
        #[serde(default)]
        layout: Option<PathBuf>,
        #[serde(default)]
        params: MazeConfig,
    },
    #[serde(rename = "disentangle2d")]
    Disentangle2d {
        /// Scenario file; the bundled scenarios when absent.
        #[serde(default)]
        scenarios: Option<PathBuf>,
        #[serde(default)]
        params: DisentangleConfig,
    },
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Maze { .. } => "maze",
            EnvConfig::Disentangle2d { .. } => "disentangle2d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Uniform-start episodes per free maze cell.
    pub n_per_cell: usize,
    /// Episodes per scenario.
    pub trials_per_scenario: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_per_cell: 5,
            trials_per_scenario: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Method label used when comparing runs; derived from the schedule when absent.
    pub name: Option<String>,
    pub seed: u64,
    pub env: EnvConfig,
    pub protagonist: SacConfig,
    pub adversary: SacConfig,
    pub arl: ArlConfig,
    /// Episode budget. When set, `arl.iterations` is derived from it.
    pub episodes: Option<usize>,
    pub eval: EvalConfig,
    /// Write a checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: None,
            seed: 0,
            env: EnvConfig::Maze {
                layout: None,
                params: MazeConfig::default(),
            },
            protagonist: SacConfig::default(),
            adversary: SacConfig::default(),
            arl: ArlConfig::default(),
            episodes: Some(4000),
            eval: EvalConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies `key=value` overrides and an
    /// optional seed, then resolves and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| ConfigError(format!("config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Derives `arl.iterations` from the episode budget and validates every section.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(budget) = self.episodes {
            if budget == 0 {
                return Err(ConfigError("episodes must be at least 1".into()).into());
            }
            let per = self.arl.episodes_per_iteration();
            if per == 0 {
                return Err(ConfigError("arl.k_a and arl.k_p must be at least 1".into()).into());
            }
            if budget % per != 0 {
                log::warn!(
                    "episode budget {budget} is not a multiple of {per} episodes per iteration; running {} iterations",
                    self.arl.iterations_for_budget(budget)
                );
            }
            self.arl.iterations = self.arl.iterations_for_budget(budget);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: arl_core::Result<()>| {
            r.map_err(|e| anyhow::Error::new(ConfigError(format!("{name}: {e}"))))
        };
        section("protagonist", self.protagonist.validate())?;
        section("adversary", self.adversary.validate())?;
        section("arl", self.arl.validate())?;
        if self.eval.n_per_cell == 0 || self.eval.trials_per_scenario == 0 {
            return Err(ConfigError("eval: n_per_cell and trials_per_scenario must be at least 1".into()).into());
        }
        match &self.env {
            EnvConfig::Maze { params, .. } => section("env.params", params.validate())?,
            EnvConfig::Disentangle2d { params, .. } => {
                section("env.params.arm", params.arm.validate())?;
                section("env.params.shapes", params.shapes.validate())?;
            }
        }
        Ok(())
    }

    pub fn method(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let k = if self.arl.k_a == self.arl.k_p {
            self.arl.k_a.to_string()
        } else {
            format!("{}-{}", self.arl.k_a, self.arl.k_p)
        };
        match self.arl.adversary_kind {
            AdversaryKind::None => "sac".into(),
            AdversaryKind::Random => format!("ra{k}"),
            AdversaryKind::Learned => format!("asac{k}"),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directory name for this run: method, seed and a short config hash.
    pub fn run_dir_name(&self) -> String {
        format!("{}-seed{}-{}", self.method(), self.seed, &self.hash()[..12])
    }

    pub fn build_env(&self) -> Result<AnyEnv> {
        match &self.env {
            EnvConfig::Maze { layout, params } => {
                let grid = match layout {
                    None => MazeGrid::bundled(),
                    Some(p) => {
                        let text = fs::read_to_string(p).map_err(|e| {
                            ConfigError(format!("cannot read maze layout {}: {e}", p.display()))
                        })?;
                        MazeGrid::parse(&text)
                            .map_err(|e| ConfigError(format!("maze layout {}: {e}", p.display())))?
                    }
                };
                let env = MazeEnv::new(Arc::new(grid), *params)
                    .map_err(|e| ConfigError(format!("env: {e}")))?;
                Ok(AnyEnv::Maze(env))
            }
            EnvConfig::Disentangle2d { params, .. } => {
                let set = self.scenarios()?.expect("disentangle env has scenarios");
                let env = DisentangleEnv::with_training_set(params.clone(), &set)
                    .map_err(|e| ConfigError(format!("env: {e}")))?;
                Ok(AnyEnv::Disentangle(env))
            }
        }
    }

    /// The validated scenario set of a disentangle run; `None` for the maze.
    pub fn scenarios(&self) -> Result<Option<ScenarioSet>> {
        let EnvConfig::Disentangle2d { scenarios, params } = &self.env else {
            return Ok(None);
        };
        let set = match scenarios {
            None => ScenarioSet::bundled(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read scenarios {}: {e}", p.display())))?;
                ScenarioSet::parse(&text)
                    .map_err(|e| ConfigError(format!("scenarios {}: {e}", p.display())))?
            }
        };
        set.validate(&params.arm, &params.shapes)
            .map_err(|e| ConfigError(format!("scenarios: {e}")))?;
        Ok(Some(set))
    }
}

/// Sets the dotted `path` in `doc` to `value`, parsed as JSON when possible
/// and taken as a string otherwise. Missing objects along the path are created.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override {spec:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!(ConfigError(format!("override {spec:?} has an empty key")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError(format!("override {path}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(anyhow!("unreachable override path"))
}

/// Loads a run configuration embedded in a checkpoint or manifest and validates it.
pub fn from_value(v: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_value(v).context("embedded run configuration")?;
    cfg.validate()?;
    Ok(cfg)
}
