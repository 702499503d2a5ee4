//! `key = value` run configuration. One pair per line, `#` starts a comment,
//! omitted keys take the defaults, unknown keys are rejected.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::env::{DriftConfig, DriftMode, EnvConfig};
use crate::error::{Error, Result};
use crate::evodpo::{EvoDpoConfig, PhaseConfig, ReferenceMode, SolverOptions};
use crate::policy::DEFAULT_PI_MIN;
use crate::verify::window_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Evodpo,
    FixedRef,
    Atlas,
    RewardBandit,
    Verify,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Evodpo,
        Mode::FixedRef,
        Mode::Atlas,
        Mode::RewardBandit,
        Mode::Verify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Evodpo => "evodpo",
            Mode::FixedRef => "fixed-ref",
            Mode::Atlas => "atlas",
            Mode::RewardBandit => "reward-bandit",
            Mode::Verify => "verify",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                format!("unknown mode {s:?}, expected one of {}", names.join(", "))
            })
    }
}

/// Parses `N..M` (half-open), `N..=M` (inclusive) or a comma list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |x: &str| x.trim().parse::<u64>().map_err(|_| format!("bad seed {x:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed set {s:?} is empty"));
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub arms: usize,
    pub dim: usize,
    pub horizon: usize,
    pub phase_length: usize,
    pub kappa: f64,
    pub beta: f64,
    pub beta_ref: f64,
    pub eps_s: f64,
    pub delta_h: f64,
    pub gate_size: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub tv_budget: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Ridge weight of the DPO fit and of SW-LinUCB.
    pub lambda: f64,
    pub ucb_alpha: f64,
    /// Sliding window; `None` means `⌈H^κ⌉`.
    pub window: Option<usize>,
    pub drift_interval: usize,
    pub fixed_context: bool,
    pub pi_min: f64,
    pub rounds: usize,
    pub episode_horizon: usize,
    pub verify_scaling: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phase = PhaseConfig::default();
        Self {
            mode: Mode::Evodpo,
            arms: 5,
            dim: 5,
            horizon: 2000,
            phase_length: phase.phase_length,
            kappa: 2.0 / 3.0,
            beta: phase.beta,
            beta_ref: phase.beta_ref,
            eps_s: phase.eps_s,
            delta_h: phase.delta_h,
            gate_size: phase.gate_size,
            delta_min: 1.0,
            delta_max: 5.0,
            tv_budget: 8000.0,
            seeds: (0..5).collect(),
            out: PathBuf::from("out"),
            lambda: SolverOptions::default().lambda,
            ucb_alpha: 0.1,
            window: None,
            drift_interval: 1,
            fixed_context: false,
            pi_min: DEFAULT_PI_MIN,
            rounds: 100,
            episode_horizon: 500,
            verify_scaling: false,
        }
    }
}

pub const KEYS: [&str; 25] = [
    "mode",
    "K",
    "d",
    "H",
    "phase_length",
    "kappa",
    "beta",
    "beta_ref",
    "eps_s",
    "delta_H",
    "gate_size",
    "delta_min",
    "delta_max",
    "V_T",
    "seeds",
    "out",
    "lambda",
    "ucb_alpha",
    "window",
    "drift_interval",
    "fixed_context",
    "pi_min",
    "rounds",
    "episode_horizon",
    "verify_scaling",
];

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
}

fn check(ok: bool, what: &str) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(format!("out of range: {what}"))
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = v.parse()?,
            "K" => {
                self.arms = parse_num(v)?;
                check(self.arms >= 2, "K must be >= 2")?;
            }
            "d" => {
                self.dim = parse_num(v)?;
                check(self.dim >= 1, "d must be >= 1")?;
            }
            "H" => {
                self.horizon = parse_num(v)?;
                check(self.horizon >= 1, "H must be >= 1")?;
            }
            "phase_length" => {
                self.phase_length = parse_num(v)?;
                check(self.phase_length >= 1, "phase_length must be >= 1")?;
            }
            "kappa" => {
                self.kappa = parse_num(v)?;
                check(self.kappa > 0.0 && self.kappa <= 1.0, "kappa must lie in (0, 1]")?;
            }
            "beta" => {
                self.beta = parse_num(v)?;
                check(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive")?;
            }
            "beta_ref" => {
                self.beta_ref = parse_num(v)?;
                check(self.beta_ref > 0.0 && self.beta_ref.is_finite(), "beta_ref must be positive")?;
            }
            "eps_s" => {
                self.eps_s = parse_num(v)?;
                check(self.eps_s >= 0.0, "eps_s must be >= 0")?;
            }
            "delta_H" => {
                self.delta_h = parse_num(v)?;
                check(self.delta_h > 0.0, "delta_H must be positive")?;
            }
            "gate_size" => {
                self.gate_size = parse_num(v)?;
                check(self.gate_size >= 1, "gate_size must be >= 1")?;
            }
            "delta_min" => {
                self.delta_min = parse_num(v)?;
                check(self.delta_min >= 0.0 && self.delta_min.is_finite(), "delta_min must be >= 0")?;
            }
            "delta_max" => {
                self.delta_max = parse_num(v)?;
                check(self.delta_max >= 0.0 && self.delta_max.is_finite(), "delta_max must be >= 0")?;
            }
            "V_T" => {
                self.tv_budget = parse_num(v)?;
                check(self.tv_budget >= 0.0, "V_T must be >= 0")?;
            }
            "seeds" => self.seeds = parse_seeds(v)?,
            "out" => {
                check(!v.is_empty(), "out must be a path")?;
                self.out = PathBuf::from(v);
            }
            "lambda" => {
                self.lambda = parse_num(v)?;
                check(self.lambda > 0.0 && self.lambda.is_finite(), "lambda must be positive")?;
            }
            "ucb_alpha" => {
                self.ucb_alpha = parse_num(v)?;
                check(self.ucb_alpha >= 0.0 && self.ucb_alpha.is_finite(), "ucb_alpha must be >= 0")?;
            }
            "window" => {
                let w: usize = parse_num(v)?;
                check(w >= 1, "window must be >= 1")?;
                self.window = Some(w);
            }
            "drift_interval" => {
                self.drift_interval = parse_num(v)?;
                check(self.drift_interval >= 1, "drift_interval must be >= 1")?;
            }
            "fixed_context" => self.fixed_context = parse_bool(v)?,
            "pi_min" => {
                self.pi_min = parse_num(v)?;
                check(self.pi_min > 0.0 && self.pi_min < 0.5, "pi_min must lie in (0, 0.5)")?;
            }
            "rounds" => {
                self.rounds = parse_num(v)?;
                check(self.rounds >= 1, "rounds must be >= 1")?;
            }
            "episode_horizon" => {
                self.episode_horizon = parse_num(v)?;
                check(self.episode_horizon >= 1, "episode_horizon must be >= 1")?;
            }
            "verify_scaling" => self.verify_scaling = parse_bool(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Cross-field checks; `line` names the offending line when known.
    fn cross_check(&self, lines: &HashMap<&str, usize>) -> Result<()> {
        let at = |keys: &[&str]| keys.iter().filter_map(|k| lines.get(k).copied()).max().unwrap_or(0);
        if self.delta_min > self.delta_max {
            return Err(Error::Config {
                line: at(&["delta_min", "delta_max"]),
                message: format!(
                    "out of range: delta_min {} exceeds delta_max {}",
                    self.delta_min, self.delta_max
                ),
            });
        }
        if self.pi_min * self.arms as f64 > 0.5 {
            return Err(Error::Config {
                line: at(&["pi_min", "K"]),
                message: format!("out of range: pi_min must be <= 1/(2K), got {}", self.pi_min),
            });
        }
        Ok(())
    }

    pub fn phase(&self) -> PhaseConfig {
        PhaseConfig {
            beta: self.beta,
            beta_ref: self.beta_ref,
            eps_s: self.eps_s,
            delta_h: self.delta_h,
            phase_length: self.phase_length,
            gate_size: self.gate_size,
        }
    }

    pub fn window(&self) -> usize {
        self.window.unwrap_or_else(|| window_for(self.horizon, self.kappa))
    }

    pub fn env(&self) -> Result<EnvConfig> {
        let cfg = EnvConfig {
            arms: self.arms,
            dim: self.dim,
            horizon: self.horizon,
            drift: DriftConfig::new(self.delta_min, self.delta_max, DriftMode::SphereWalk)?
                .with_interval(self.drift_interval),
            tv_budget: self.tv_budget,
            fixed_context: self.fixed_context,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn learner(&self, mode: ReferenceMode) -> EvoDpoConfig {
        EvoDpoConfig {
            phase: self.phase(),
            solver: SolverOptions {
                lambda: self.lambda,
                ..SolverOptions::default()
            },
            window: self.window(),
            pi_min: self.pi_min,
            mode,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<&str, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split_once('#').map_or(raw, |(b, _)| b).trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected key = value, got {body:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let Some(known) = KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Config {
                line,
                message: format!("unknown key {key:?}"),
            });
        };
        if lines.insert(known, line).is_some() {
            return Err(Error::Config {
                line,
                message: format!("duplicate key {key:?}"),
            });
        }
        cfg.set(key, value).map_err(|m| Error::Config {
            line,
            message: format!("{key}: {m}"),
        })?;
    }
    cfg.cross_check(&lines)?;
    Ok(cfg)
}
