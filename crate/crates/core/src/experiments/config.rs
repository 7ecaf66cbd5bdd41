//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diffusive::{ForcingKind, ForcingSpec, PhysParams};
use crate::error::{Error, Result};
use crate::flowmap::FlowMapSettings;
use crate::mollifier::{DEFAULT_OVERSAMPLE, DEFAULT_WIDTH};
use crate::spectral::Grid;

use super::initial::InitialKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Diffusive,
    Nondiffusive,
    /// Diffusive when `eps > 0`, flow map when `eps = 0`.
    Auto,
}

impl FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusive" => Ok(Self::Diffusive),
            "nondiffusive" => Ok(Self::Nondiffusive),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Config(format!("unknown branch `{other}`"))),
        }
    }
}

/// Complete description of one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: [usize; 3],
    pub params: PhysParams,
    pub horizon: f64,
    pub dt: f64,
    pub diag_stride: usize,
    pub forcing: ForcingSpec,
    pub mollifier_width: f64,
    pub mollifier_oversample: usize,
    pub flowmap: FlowMapSettings,
    pub initial: InitialKind,
    pub seed: u64,
    pub amplitude: f64,
    pub branch: Branch,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: [32, 32, 32],
            params: PhysParams { nu: 0.5, re: 10.0, wi: 1.0, eps: 0.01 },
            horizon: 1.0,
            dt: 0.01,
            diag_stride: 1,
            forcing: ForcingSpec::none(),
            mollifier_width: DEFAULT_WIDTH,
            mollifier_oversample: DEFAULT_OVERSAMPLE,
            flowmap: FlowMapSettings::default(),
            initial: InitialKind::TaylorGreen,
            seed: 0,
            amplitude: 1.0,
            branch: Branch::Auto,
            output: None,
        }
    }
}

const KEYS: &[&str] = &[
    "physics.nu",
    "physics.re",
    "physics.wi",
    "physics.eps",
    "time.T",
    "time.dt",
    "time.diag_stride",
    "grid.n1",
    "grid.n2",
    "grid.n3",
    "forcing.kind",
    "forcing.amplitude",
    "forcing.frequency",
    "forcing.wavenumber",
    "mollifier.width",
    "mollifier.oversample",
    "flowmap.substeps",
    "flowmap.tol_det",
    "initial.kind",
    "initial.seed",
    "initial.amplitude",
    "run.branch",
    "run.output",
];

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut forcing_kind = "none".to_string();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            match key {
                "physics.nu" => cfg.params.nu = parse_num(key, value)?,
                "physics.re" => cfg.params.re = parse_num(key, value)?,
                "physics.wi" => cfg.params.wi = parse_num(key, value)?,
                "physics.eps" => cfg.params.eps = parse_num(key, value)?,
                "time.T" => cfg.horizon = parse_num(key, value)?,
                "time.dt" => cfg.dt = parse_num(key, value)?,
                "time.diag_stride" => cfg.diag_stride = parse_num(key, value)?,
                "grid.n1" => cfg.grid[0] = parse_num(key, value)?,
                "grid.n2" => cfg.grid[1] = parse_num(key, value)?,
                "grid.n3" => cfg.grid[2] = parse_num(key, value)?,
                "forcing.kind" => forcing_kind = value.to_string(),
                "forcing.amplitude" => cfg.forcing.amplitude = parse_num(key, value)?,
                "forcing.frequency" => cfg.forcing.frequency = parse_num(key, value)?,
                "forcing.wavenumber" => cfg.forcing.wavenumber = parse_num(key, value)?,
                "mollifier.width" => cfg.mollifier_width = parse_num(key, value)?,
                "mollifier.oversample" => cfg.mollifier_oversample = parse_num(key, value)?,
                "flowmap.substeps" => cfg.flowmap.substeps = parse_num(key, value)?,
                "flowmap.tol_det" => cfg.flowmap.tol_det = parse_num(key, value)?,
                "initial.kind" => cfg.initial = value.parse()?,
                "initial.seed" => cfg.seed = parse_num(key, value)?,
                "initial.amplitude" => cfg.amplitude = parse_num(key, value)?,
                "run.branch" => cfg.branch = value.parse()?,
                "run.output" => cfg.output = Some(PathBuf::from(value)),
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.forcing.kind = match forcing_kind.as_str() {
            "none" => ForcingKind::None,
            "sinusoidal" => ForcingKind::Sinusoidal,
            other => return Err(Error::Config(format!("unknown forcing kind `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        Grid::new(self.grid[0], self.grid[1], self.grid[2]).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("time.T = {} must be nonnegative", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time.dt = {} must be positive", self.dt)));
        }
        if self.diag_stride == 0 {
            return Err(Error::Config("time.diag_stride must be >= 1".into()));
        }
        if self.flowmap.substeps == 0 || !(self.flowmap.tol_det > 0.0) {
            return Err(Error::Config("flowmap.substeps >= 1 and flowmap.tol_det > 0 required".into()));
        }
        match (self.branch, self.params.eps > 0.0) {
            (Branch::Diffusive, false) => Err(Error::Config("branch diffusive needs physics.eps > 0".into())),
            (Branch::Nondiffusive, true) => Err(Error::Config("branch nondiffusive needs physics.eps = 0".into())),
            _ => Ok(()),
        }
    }

    /// Branch actually run.
    pub fn resolved_branch(&self) -> Branch {
        match self.branch {
            Branch::Auto if self.params.eps > 0.0 => Branch::Diffusive,
            Branch::Auto => Branch::Nondiffusive,
            b => b,
        }
    }

    /// The same configuration with another `eps` and the branch it implies.
    pub fn with_eps(&self, eps: f64) -> Self {
        Self { params: self.params.with_eps(eps), branch: Branch::Auto, ..self.clone() }
    }
}
