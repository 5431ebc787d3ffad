//! Experiment configuration: a flat `key=value` file whose entries are
//! overridden by command-line flags of the same name.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Regret,
    Bandit,
    Boosting,
    Batch,
    Lowerbound,
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "regret" => ExperimentKind::Regret,
            "bandit" => ExperimentKind::Bandit,
            "boosting" => ExperimentKind::Boosting,
            "batch" => ExperimentKind::Batch,
            "lowerbound" => ExperimentKind::Lowerbound,
            _ => return err(format!("unknown experiment {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Grid,
    Langevin,
}

impl FromStr for SamplerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "grid" => Ok(SamplerKind::Grid),
            "langevin" => Ok(SamplerKind::Langevin),
            _ => err(format!("unknown sampler {s:?}, expected grid or langevin")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamKind {
    Stochastic,
    Realizable,
    Margin,
}

impl FromStr for StreamKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "stochastic" => Ok(StreamKind::Stochastic),
            "realizable" => Ok(StreamKind::Realizable),
            "margin" => Ok(StreamKind::Margin),
            _ => err(format!("unknown stream {s:?}, expected stochastic, realizable or margin")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeakKind {
    Cheating,
    Linear,
}

impl FromStr for WeakKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "cheating" => Ok(WeakKind::Cheating),
            "linear" => Ok(WeakKind::Linear),
            _ => err(format!("unknown weak learner {s:?}, expected cheating or linear")),
        }
    }
}

/// Every knob of a run. Optional fields fall back to per-experiment
/// defaults that are resolved (and recorded in the metadata) at run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub n: usize,
    pub mu: Option<f64>,
    pub delta: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub gamma: f64,
    pub sampler: SamplerKind,
    /// Grid points per free dimension in grid-exact mode.
    pub grid: usize,
    pub m: usize,
    pub steps: usize,
    /// OGD step constant c in η_t = c/√t.
    pub eta: Option<f64>,
    pub seeds: u64,
    pub seed: u64,
    pub stream: StreamKind,
    pub noise: f64,
    pub weak: WeakKind,
    /// Support size of the discrete distribution in batch runs.
    pub support: usize,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            d: 1,
            k: 2,
            b: 1.0,
            r: None,
            l: None,
            n: 500,
            mu: None,
            delta: 0.05,
            big_n: 4,
            gamma: 0.1,
            sampler: SamplerKind::Grid,
            grid: 33,
            m: 64,
            steps: 200,
            eta: None,
            seeds: 1,
            seed: 0,
            stream: StreamKind::Stochastic,
            noise: 0.0,
            weak: WeakKind::Cheating,
            support: 8,
            out: PathBuf::from("out"),
        }
    }

    /// R defaults to 1, or 2 for margin streams whose inputs have norm ≤ 2.
    pub fn feature_bound(&self) -> f64 {
        self.r.unwrap_or(match self.stream {
            StreamKind::Margin => 2.0,
            _ => 1.0,
        })
    }

    /// Builds a config from `key=value` pairs, applied in order.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            map.insert(k.to_string(), v.to_string());
        }
        let kind = match map.remove("experiment") {
            Some(v) => v.parse()?,
            None => return err("missing required key: experiment"),
        };
        let mut cfg = ExperimentConfig::new(kind);
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
            v.parse()
                .or_else(|_| err(format!("bad value {v:?} for {key}")))
        }
        match key {
            "experiment" => self.experiment = value.parse()?,
            "d" => self.d = p(key, value)?,
            "K" => self.k = p(key, value)?,
            "B" => self.b = p(key, value)?,
            "R" => self.r = Some(p(key, value)?),
            "L" => self.l = Some(p(key, value)?),
            "n" => self.n = p(key, value)?,
            "mu" => self.mu = Some(p(key, value)?),
            "delta" => self.delta = p(key, value)?,
            "N" => self.big_n = p(key, value)?,
            "gamma" => self.gamma = p(key, value)?,
            "sampler" => self.sampler = value.parse()?,
            "grid" => self.grid = p(key, value)?,
            "m" => self.m = p(key, value)?,
            "steps" => self.steps = p(key, value)?,
            "eta" => self.eta = Some(p(key, value)?),
            "seeds" => self.seeds = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "stream" => self.stream = value.parse()?,
            "noise" => self.noise = p(key, value)?,
            "weak" => self.weak = value.parse()?,
            "support" => self.support = p(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d == 0 || self.k < 2 || self.n == 0 || self.seeds == 0 {
            return err("need d >= 1, K >= 2, n >= 1 and seeds >= 1");
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return err("B must be positive");
        }
        if let Some(r) = self.r {
            if !(r > 0.0) || !r.is_finite() {
                return err("R must be positive");
            }
        }
        if let Some(l) = self.l {
            if !(l > 0.0) || !l.is_finite() {
                return err("L must be positive");
            }
        }
        if let Some(mu) = self.mu {
            if !(0.0..=0.5).contains(&mu) {
                return err("mu must lie in [0, 1/2]");
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return err("delta must lie in (0, 1)");
        }
        if self.big_n == 0 {
            return err("N must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.noise) {
            return err("gamma and noise must lie in [0, 1]");
        }
        if self.grid < 2 || self.m == 0 || self.steps == 0 || self.support == 0 {
            return err("grid >= 2, m >= 1, steps >= 1 and support >= 1 are required");
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return err("eta must be positive");
            }
        }
        if self.stream == StreamKind::Margin && self.k != 2 {
            return err("margin streams are binary: K must be 2");
        }
        Ok(())
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => return err(format!("line {}: expected key=value", i + 1)),
        }
    }
    Ok(out)
}
