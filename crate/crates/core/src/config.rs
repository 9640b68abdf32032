//! Scenario configuration and its flat `key=value` text form.
//!
//! Lines are `key=value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys are rejected. Lists are comma separated.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Ego-only pipeline on the raw BEV.
    None,
    /// Ego-only pipeline fed the aggregated multi-agent BEV.
    Early,
    /// Per-agent predictions merged in the ego frame.
    Late,
    /// Compressed feature sharing with attentive fusion.
    Core,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::None, Regime::Early, Regime::Late, Regime::Core];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Early => "early",
            Regime::Late => "late",
            Regime::Core => "core",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?} (expected none|early|late|core)")))
    }
}

/// Which task heads contribute to the task loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Seg,
    Det,
    Both,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Det => "det",
            Task::Both => "both",
        }
    }

    pub fn seg(self) -> bool {
        matches!(self, Task::Seg | Task::Both)
    }

    pub fn det(self) -> bool {
        matches!(self, Task::Det | Task::Both)
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg" => Ok(Task::Seg),
            "det" => Ok(Task::Det),
            "both" => Ok(Task::Both),
            _ => Err(Error::Config(format!("unknown task {s:?} (expected seg|det|both)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub meters_per_cell: f64,
    pub n_rays: usize,
    /// Sensor range in meters.
    pub max_range: f64,
    pub seed: u64,
    /// Top-activation percentage kept before sub-sampling.
    pub k_percent: f64,
    /// Uniform sub-sampling percentage.
    pub r_percent: f64,
    pub lambda: f64,
    /// Channels on the wire.
    pub c_compressed: usize,
    /// Channels of the intermediate feature map.
    pub c_feature: usize,
    pub l_kernel: usize,
    pub lr: f64,
    pub epochs: usize,
    pub regime: Regime,
    pub task: Task,
    pub train_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub train_worlds: usize,
    pub eval_worlds: usize,
    /// Side length of the square world in meters.
    pub world_size: f64,
    /// Maximum distance between the ego agent and any other agent.
    pub comm_range: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            grid_h: 64,
            grid_w: 64,
            meters_per_cell: 0.4,
            n_rays: 512,
            max_range: 10.0,
            seed: 0,
            k_percent: 90.0,
            r_percent: 90.0,
            lambda: 1.0,
            c_compressed: 4,
            c_feature: 8,
            l_kernel: 3,
            lr: 0.002,
            epochs: 30,
            regime: Regime::Core,
            task: Task::Seg,
            train_seeds: vec![1, 2, 3],
            eval_seeds: vec![1000],
            train_worlds: 200,
            eval_worlds: 40,
            world_size: 36.0,
            comm_range: 17.5,
        }
    }
}

pub const KEYS: &[&str] = &[
    "n_agents",
    "grid_h",
    "grid_w",
    "meters_per_cell",
    "n_rays",
    "max_range",
    "seed",
    "K",
    "R",
    "lambda",
    "C_compressed",
    "C_feature",
    "l_kernel",
    "lr",
    "epochs",
    "regime",
    "task",
    "train_seeds",
    "eval_seeds",
    "train_worlds",
    "eval_worlds",
    "world_size",
    "comm_range",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s)).collect()
}

fn join(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

impl ScenarioConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_agents" => self.n_agents = parse(key, value)?,
            "grid_h" => self.grid_h = parse(key, value)?,
            "grid_w" => self.grid_w = parse(key, value)?,
            "meters_per_cell" => self.meters_per_cell = parse(key, value)?,
            "n_rays" => self.n_rays = parse(key, value)?,
            "max_range" => self.max_range = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "K" => self.k_percent = parse(key, value)?,
            "R" => self.r_percent = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "C_compressed" => self.c_compressed = parse(key, value)?,
            "C_feature" => self.c_feature = parse(key, value)?,
            "l_kernel" => self.l_kernel = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "regime" => self.regime = value.trim().parse()?,
            "task" => self.task = value.trim().parse()?,
            "train_seeds" => self.train_seeds = parse_list(key, value)?,
            "eval_seeds" => self.eval_seeds = parse_list(key, value)?,
            "train_worlds" => self.train_worlds = parse(key, value)?,
            "eval_worlds" => self.eval_worlds = parse(key, value)?,
            "world_size" => self.world_size = parse(key, value)?,
            "comm_range" => self.comm_range = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_agents" => self.n_agents.to_string(),
            "grid_h" => self.grid_h.to_string(),
            "grid_w" => self.grid_w.to_string(),
            "meters_per_cell" => self.meters_per_cell.to_string(),
            "n_rays" => self.n_rays.to_string(),
            "max_range" => self.max_range.to_string(),
            "seed" => self.seed.to_string(),
            "K" => self.k_percent.to_string(),
            "R" => self.r_percent.to_string(),
            "lambda" => self.lambda.to_string(),
            "C_compressed" => self.c_compressed.to_string(),
            "C_feature" => self.c_feature.to_string(),
            "l_kernel" => self.l_kernel.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "regime" => self.regime.to_string(),
            "task" => self.task.as_str().to_string(),
            "train_seeds" => join(&self.train_seeds),
            "eval_seeds" => join(&self.eval_seeds),
            "train_worlds" => self.train_worlds.to_string(),
            "eval_worlds" => self.eval_worlds.to_string(),
            "world_size" => self.world_size.to_string(),
            "comm_range" => self.comm_range.to_string(),
            _ => return None,
        })
    }

    /// Parses a complete key=value document on top of the defaults and
    /// validates the result.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key}={}", self.get(key).expect("every listed key is readable")).unwrap();
        }
        out
    }

    /// Spatial fraction of cells transmitted, `(K / 100) * (R / 100)`.
    pub fn spatial_ratio(&self) -> f64 {
        self.k_percent / 100.0 * (self.r_percent / 100.0)
    }

    /// Sets `K = R = 100 * sqrt(ratio)` so the transmitted fraction equals
    /// `ratio`.
    pub fn set_spatial_ratio(&mut self, ratio: f64) {
        let p = 100.0 * ratio.sqrt();
        self.k_percent = p;
        self.r_percent = p;
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return fail("n_agents must be >= 1".into());
        }
        if self.grid_h == 0 || self.grid_w == 0 || self.grid_h % 4 != 0 || self.grid_w % 4 != 0 {
            return fail(format!("grid {}x{} must be non-empty multiples of 4", self.grid_h, self.grid_w));
        }
        if !(self.meters_per_cell > 0.0) || !(self.max_range > 0.0) || !(self.world_size > 0.0) {
            return fail("meters_per_cell, max_range and world_size must be positive".into());
        }
        if !(self.comm_range > 0.0) {
            return fail("comm_range must be positive".into());
        }
        if self.n_rays < 8 {
            return fail(format!("n_rays must be >= 8, got {}", self.n_rays));
        }
        for (name, v) in [("K", self.k_percent), ("R", self.r_percent)] {
            if !(v > 0.0 && v <= 100.0) {
                return fail(format!("{name} must be in (0, 100], got {v}"));
            }
        }
        if self.c_compressed == 0 || self.c_compressed >= self.c_feature {
            return fail(format!(
                "C_compressed must be in [1, C_feature), got {} with C_feature {}",
                self.c_compressed, self.c_feature
            ));
        }
        if self.l_kernel % 2 == 0 {
            return fail(format!("l_kernel must be odd, got {}", self.l_kernel));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        Ok(())
    }
}
