//! `key = value` run configuration.

use gsqg_core::euler_arnold::InitialCondition;
use gsqg_core::spectral::InterpMethod;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got '{text}'")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },

    #[error("{key}: cannot parse '{value}' ({reason})")]
    Type { key: String, value: String, reason: String },

    #[error("{key}: {reason}")]
    Range { key: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Jacobi,
    ConjugateScan,
    SphereExample,
    MorseBound,
    Verify,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Simulate,
        Command::Jacobi,
        Command::ConjugateScan,
        Command::SphereExample,
        Command::MorseBound,
        Command::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Jacobi => "jacobi",
            Command::ConjugateScan => "conjugate-scan",
            Command::SphereExample => "sphere-example",
            Command::MorseBound => "morse-bound",
            Command::Verify => "verify",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command '{s}'"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumKind {
    Torus,
    Sphere,
}

impl FromStr for SpectrumKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "torus" => Ok(SpectrumKind::Torus),
            "sphere" => Ok(SpectrumKind::Sphere),
            _ => Err("expected torus or sphere".into()),
        }
    }
}

impl fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectrumKind::Torus => "torus",
            SpectrumKind::Sphere => "sphere",
        })
    }
}

/// A constant that is either given or extracted from the geodesic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

impl FromStr for Auto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Auto::Auto);
        }
        s.parse().map(Auto::Value).map_err(|_| "expected a number or auto".into())
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

fn interp_name(m: InterpMethod) -> &'static str {
    match m {
        InterpMethod::Fourier => "fourier",
        InterpMethod::Gaussian => "gaussian",
        InterpMethod::Bicubic => "bicubic",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub beta: f64,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Galerkin truncation `|k| <= K`.
    pub k: usize,
    pub init: InitialCondition,
    pub stride: usize,
    pub substeps: usize,
    pub n_max: u32,
    pub k_max: u32,
    pub threshold: f64,
    pub c: Auto,
    pub delta: Auto,
    pub spectrum: SpectrumKind,
    pub interp: InterpMethod,
    pub filter: Option<f64>,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Simulate,
            beta: 0.0,
            n: 64,
            dt: 1e-3,
            t_final: 1.0,
            k: 6,
            init: InitialCondition::Cosy,
            stride: 10,
            substeps: 4,
            n_max: 30,
            k_max: 64,
            threshold: 1e-3,
            c: Auto::Auto,
            delta: Auto::Auto,
            spectrum: SpectrumKind::Torus,
            interp: InterpMethod::Gaussian,
            filter: None,
            deterministic: false,
        }
    }
}

/// Keys, defaults and meaning, as printed by `--help`.
pub const KEY_HELP: &str = "\
Configuration keys (`key = value`, `#` starts a comment):
  command     simulate | jacobi | conjugate-scan | sphere-example | morse-bound | verify
  beta        exponent in [0, 1]                                  (default 0)
  N           grid points per axis, even, >= 16                   (default 64)
  dt          time step                                           (default 1e-3)
  t_final     final time; also the horizon T of morse-bound       (default 1)
  K           Galerkin truncation |k| <= K, 2 <= K <= N/3         (default 6)
  init        cosy | shear | random:SEED:KMAX                     (default cosy)
  stride      solver steps between snapshots                      (default 10)
  substeps    Jacobi RK4 steps per snapshot interval              (default 4)
  n_max       largest sphere harmonic degree                      (default 30)
  k_max       torus spectrum coverage |k| <= k_max                (default 64)
  threshold   conjugate threshold as a fraction of median sigma   (default 1e-3)
  C           constant C of morse-bound, number or auto           (default auto)
  delta       constant delta of morse-bound, number or auto       (default auto)
  spectrum    torus | sphere                                      (default torus)
  interp      gaussian | fourier | bicubic                        (default gaussian)
  filter      exponential filter strength, or none                (default none)";

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Type {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn range(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key: key.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Sets one key; `Ok(false)` if the key is unknown.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "command" => self.command = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "N" => self.n = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "t_final" => self.t_final = parse(key, value)?,
            "K" => self.k = parse(key, value)?,
            "init" => self.init = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "substeps" => self.substeps = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "k_max" => self.k_max = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "C" => self.c = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "spectrum" => self.spectrum = parse(key, value)?,
            "interp" => self.interp = parse(key, value)?,
            "filter" => {
                self.filter = if value == "none" { None } else { Some(parse(key, value)?) };
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = split_assignment(assignment).ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: assignment.into(),
        })?;
        if self.set(key, value)? {
            Ok(())
        } else {
            Err(ConfigError::UnknownKey { line: 0, key: key.into() })
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(range(key, format!("must be positive and finite, got {v}")))
            }
        };
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(range("beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        if self.n < 16 || self.n % 2 != 0 {
            return Err(range("N", format!("must be even and at least 16, got {}", self.n)));
        }
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        if self.k < 2 || self.k > self.n / 3 {
            return Err(range("K", format!("must lie in [2, N/3 = {}], got {}", self.n / 3, self.k)));
        }
        if let InitialCondition::Random { kmax, .. } = self.init {
            if kmax > self.n / 3 {
                return Err(range("init", format!("KMAX = {kmax} exceeds N/3 = {}", self.n / 3)));
            }
        }
        if self.stride == 0 {
            return Err(range("stride", "must be at least 1"));
        }
        if self.substeps == 0 {
            return Err(range("substeps", "must be at least 1"));
        }
        if self.n_max < 2 {
            return Err(range("n_max", format!("must be at least 2, got {}", self.n_max)));
        }
        if self.k_max < 1 {
            return Err(range("k_max", "must be at least 1"));
        }
        positive("threshold", self.threshold)?;
        if let Auto::Value(c) = self.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(range("C", format!("must be nonnegative and finite, got {c}")));
            }
        }
        if let Auto::Value(d) = self.delta {
            positive("delta", d)?;
        }
        if let Some(a) = self.filter {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(range("filter", format!("must be nonnegative, got {a}")));
            }
        }
        Ok(())
    }

    /// Resolved configuration, one `key = value` per line.
    pub fn render(&self) -> String {
        let filter = self.filter.map_or("none".to_string(), |a| a.to_string());
        [
            format!("command = {}", self.command),
            format!("beta = {}", self.beta),
            format!("N = {}", self.n),
            format!("dt = {}", self.dt),
            format!("t_final = {}", self.t_final),
            format!("K = {}", self.k),
            format!("init = {}", self.init),
            format!("stride = {}", self.stride),
            format!("substeps = {}", self.substeps),
            format!("n_max = {}", self.n_max),
            format!("k_max = {}", self.k_max),
            format!("threshold = {}", self.threshold),
            format!("C = {}", self.c),
            format!("delta = {}", self.delta),
            format!("spectrum = {}", self.spectrum),
            format!("interp = {}", interp_name(self.interp)),
            format!("filter = {filter}"),
            format!("deterministic = {}", self.deterministic),
        ]
        .join("\n")
            + "\n"
    }
}

fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}

/// Parses and validates a configuration file on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg = parse_unvalidated(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses without the range checks, so overrides can still be applied.
pub fn parse_unvalidated(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_assignment(line).ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.trim().into(),
        })?;
        if !cfg.set(key, value)? {
            return Err(ConfigError::UnknownKey {
                line: i + 1,
                key: key.into(),
            });
        }
    }
    Ok(cfg)
}
