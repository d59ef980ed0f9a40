use std::collections::HashMap;
use std::path::PathBuf;

use super::profile::Profile;
use crate::algorithms::{Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::heat_core::{Grid, TimeGrid};
use crate::optimal_control::ControlProblem;
use crate::parareal::{CorrectionControl, StepRule};

/// Keys in canonical order.
pub const KEYS: &[&str] = &[
    "alpha",
    "nu",
    "T",
    "dt",
    "nx",
    "ny",
    "y0",
    "y_target",
    "algorithm",
    "N",
    "l_max",
    "max_outer",
    "tol",
    "workers",
    "coarse_steps",
    "correction",
    "step_rule",
    "wall_clock",
    "seed",
    "beta_probes",
    "dump_state",
    "output",
];

/// Problem, algorithm and sweep settings of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub nu: f64,
    pub horizon: f64,
    pub dt: f64,
    pub nx: usize,
    pub ny: usize,
    pub y0: Profile,
    pub y_target: Profile,
    pub algorithm: Algorithm,
    /// Sweep over the number of sub-intervals.
    pub intervals: Vec<usize>,
    /// Sweep over the inner step count `ℓ_max`.
    pub inner_steps: Vec<usize>,
    pub max_outer: usize,
    pub tol: Option<f64>,
    pub workers: usize,
    pub coarse_steps: usize,
    pub correction: CorrectionControl,
    pub step_rule: StepRule,
    pub wall_clock: bool,
    /// Seed of the Hessian probes behind `β_emp`.
    pub seed: u64,
    pub beta_probes: usize,
    /// Write the final state of every run as a grid dump.
    pub dump_state: bool,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            nu: 1e-2,
            horizon: 6.4,
            dt: 1e-2,
            nx: 15,
            ny: 15,
            y0: Profile::Zero,
            y_target: Profile::Gaussian { cx: 0.5, cy: 0.5, sigma: 0.15, amp: 1.0 },
            algorithm: Algorithm::Sitpoc,
            intervals: vec![4],
            inner_steps: vec![1],
            max_outer: 500,
            tol: None,
            workers: 1,
            coarse_steps: 1,
            correction: CorrectionControl::default(),
            step_rule: StepRule::default(),
            wall_clock: true,
            seed: 0,
            beta_probes: 20,
            dump_state: false,
            output: PathBuf::from("results"),
        }
    }
}

fn list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    fn value_of(&self, key: &str) -> String {
        match key {
            "alpha" => self.alpha.to_string(),
            "nu" => self.nu.to_string(),
            "T" => self.horizon.to_string(),
            "dt" => self.dt.to_string(),
            "nx" => self.nx.to_string(),
            "ny" => self.ny.to_string(),
            "y0" => self.y0.to_string(),
            "y_target" => self.y_target.to_string(),
            "algorithm" => self.algorithm.to_string(),
            "N" => list(&self.intervals),
            "l_max" => list(&self.inner_steps),
            "max_outer" => self.max_outer.to_string(),
            "tol" => self.tol.map_or_else(|| "auto".to_string(), |t| t.to_string()),
            "workers" => self.workers.to_string(),
            "coarse_steps" => self.coarse_steps.to_string(),
            "correction" => self.correction.to_string(),
            "step_rule" => self.step_rule.to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            "seed" => self.seed.to_string(),
            "beta_probes" => self.beta_probes.to_string(),
            "dump_state" => self.dump_state.to_string(),
            "output" => self.output.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
        }
        fn nums(key: &str, value: &str) -> Result<Vec<usize>> {
            value.split(',').map(|v| num(key, v.trim())).collect()
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "nu" => self.nu = num(key, value)?,
            "T" => self.horizon = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "nx" => self.nx = num(key, value)?,
            "ny" => self.ny = num(key, value)?,
            "y0" => self.y0 = value.parse()?,
            "y_target" => self.y_target = value.parse()?,
            "algorithm" => self.algorithm = value.parse()?,
            "N" => self.intervals = nums(key, value)?,
            "l_max" => self.inner_steps = nums(key, value)?,
            "max_outer" => self.max_outer = num(key, value)?,
            "tol" => self.tol = if value == "auto" { None } else { Some(num(key, value)?) },
            "workers" => self.workers = num(key, value)?,
            "coarse_steps" => self.coarse_steps = num(key, value)?,
            "correction" => self.correction = value.parse()?,
            "step_rule" => self.step_rule = value.parse()?,
            "wall_clock" => self.wall_clock = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "beta_probes" => self.beta_probes = num(key, value)?,
            "dump_state" => self.dump_state = num(key, value)?,
            "output" => {
                if value.is_empty() {
                    return Err(Error::Config("output: empty path".into()));
                }
                self.output = PathBuf::from(value)
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// First violated invariant, as (key, message).
    fn violation(&self) -> Option<(&'static str, String)> {
        let positive = [("alpha", self.alpha), ("nu", self.nu), ("T", self.horizon), ("dt", self.dt)];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Some((key, format!("must be positive and finite, got {v}")));
            }
        }
        if let Err(e) = Grid::new(self.nx, self.ny) {
            return Some(("nx", e.to_string()));
        }
        let time = match TimeGrid::new(self.horizon, self.dt) {
            Ok(t) => t,
            Err(e) => return Some(("dt", e.to_string())),
        };
        let m = time.steps();
        if self.intervals.is_empty() {
            return Some(("N", "sweep must not be empty".into()));
        }
        for &n in &self.intervals {
            if n == 0 || m % n != 0 {
                return Some(("N", format!("{n} sub-intervals do not divide the {m} time steps")));
            }
            if self.algorithm == Algorithm::Pitpoc && (m / n) % self.coarse_steps.max(1) != 0 {
                return Some(("coarse_steps", format!("{} coarse steps do not divide {} fine steps per interval", self.coarse_steps, m / n)));
            }
        }
        if self.inner_steps.is_empty() || self.inner_steps.contains(&0) {
            return Some(("l_max", "inner step counts must be positive and the sweep non-empty".into()));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Some(("tol", format!("must be positive, got {t}")));
            }
        }
        if self.workers == 0 {
            return Some(("workers", "must be at least 1".into()));
        }
        if self.coarse_steps == 0 {
            return Some(("coarse_steps", "must be at least 1".into()));
        }
        if self.beta_probes < 10 {
            return Some(("beta_probes", format!("must be at least 10, got {}", self.beta_probes)));
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        match self.violation() {
            Some((key, message)) => Err(Error::Config(format!("{key}: {message}"))),
            None => Ok(()),
        }
    }

    /// Canonical `key = value` text listing every key.
    pub fn serialize(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        let grid = Grid::new(self.nx, self.ny)?;
        let time = TimeGrid::new(self.horizon, self.dt)?;
        let y0 = self.y0.sample(&grid);
        let yt = self.y_target.sample(&grid);
        ControlProblem::new(grid, time, self.alpha, self.nu, y0, yt)
    }

    pub fn run_config(&self, intervals: usize, inner_steps: usize) -> RunConfig {
        RunConfig {
            algorithm: self.algorithm,
            intervals,
            inner_steps,
            max_outer: self.max_outer,
            tol: self.tol,
            workers: self.workers,
            coarse_steps_per_interval: self.coarse_steps,
            correction: self.correction,
            step_rule: self.step_rule,
            wall_clock: self.wall_clock,
        }
    }

    /// Every `(N, ℓ_max)` pair of the sweep, `N` outermost.
    pub fn sweep(&self) -> Vec<(usize, usize)> {
        self.intervals.iter().flat_map(|&n| self.inner_steps.iter().map(move |&l| (n, l))).collect()
    }
}

/// Splits a line into `(key, value)`, dropping `#` comments. `None` for
/// blank lines.
fn split_line(raw: &str, line: usize) -> Result<Option<(String, String)>> {
    let text = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
    if text.is_empty() {
        return Ok(None);
    }
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Parse { line, message: format!("expected 'key = value', got '{text}'") })?;
    Ok(Some((key.trim().to_string(), value.trim().to_string())))
}

/// Parses and validates a config. Errors carry the 1-based line of the
/// offending key; invariants violated by defaulted keys report line 0.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, value)) = split_line(raw, line)? else { continue };
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Parse { line, message: format!("unknown key '{key}'") });
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(Error::Parse { line, message: format!("duplicate key '{key}' (first set on line {first})") });
        }
        cfg.set(&key, &value).map_err(|e| Error::Parse { line, message: strip_prefix(e) })?;
    }
    if let Some((key, message)) = cfg.violation() {
        let line = seen.get(key).copied().unwrap_or(0);
        return Err(Error::Parse { line, message: format!("{key}: {message}") });
    }
    Ok(cfg)
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Comments and blank lines removed, `key = value` spacing canonical,
/// list items unspaced, keys in canonical order.
pub fn normalize(text: &str) -> Result<String> {
    let mut entries: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let Some((key, value)) = split_line(raw, i + 1)? else { continue };
        let rank = KEYS
            .iter()
            .position(|k| *k == key)
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("unknown key '{key}'") })?;
        let value = if key == "N" || key == "l_max" {
            value.split(',').map(str::trim).collect::<Vec<_>>().join(",")
        } else {
            value
        };
        entries.push((rank, format!("{key} = {value}\n")));
    }
    entries.sort_by_key(|e| e.0);
    Ok(entries.into_iter().map(|e| e.1).collect())
}
