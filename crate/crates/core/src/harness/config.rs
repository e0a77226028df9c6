//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; every key may appear at most
//! once and unknown keys are rejected. Values are echoed verbatim into every
//! run summary.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `T` | horizon | required |
//! | `d` | context dimension | required |
//! | `algorithm` | `epbt`, `eoc`, `sbip`, `onebit-eoc`, `onebit-epbt`, `oracle`, `fixed` | required |
//! | `seed` | master seed | `0` |
//! | `reps` | replications per sweep point | `1` |
//! | `out` | output directory | `out` |
//! | `market.A`, `market.B` | parameter and context norm bounds | `1` |
//! | `market.noise` | `none`, `uniform`, `triangular` | `none` |
//! | `market.C` | noise half-width | `0` |
//! | `market.theta_s`, `market.theta_b` | comma-separated parameters | drawn from the seed |
//! | `context.generator` | `mixed`, `cyclic`, `sphere`, `drift`, `replay` | `mixed` |
//! | `context.radius` | scale of generated contexts | `market.B` |
//! | `context.rate` | drift angle per round | `0.01` |
//! | `context.start` | drift start vector | `radius·e₁` |
//! | `context.file` | replay file, relative to the config file | |
//! | `schedule.eps`, `schedule.delta`, `schedule.mu`, `schedule.t_int`, `schedule.t_fd`, `schedule.K`, `schedule.eps_tilde` | fixed schedule constants | theory values |
//! | `schedule.eps_scale`, `schedule.mu_scale`, `schedule.t_int_scale`, `schedule.t_fd_scale` | multipliers on theory values | `1` |
//! | `schedule.eps_tilde_factor` | replaces `12PL + 7` | theory value |
//! | `epbt.eps` | ellipsoid stopping width | `A·B·d²/T` |
//! | `onebit.alpha` | market activity level | `1` |
//! | `onebit.t_e` | exploration rounds to fund | inner policy bound |
//! | `onebit.budget` | `explicit` or `theorem` | `explicit` |
//! | `onebit.i_base` | base of the collection spread `base^{−i}` | `2` |
//! | `oracle.step` | benchmark grid step, relative to `P` | `1e-3` |
//! | `fixed.price` | price posted by `fixed` | `0` |
//! | `trace.max_rows` | full-resolution trace limit | `10000` |

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;

use super::HarnessError;
use crate::market::{ContextGenerator, NoiseSpec};
use crate::policy::{BudgetMode, ScheduleOverrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    EpBt,
    Eoc,
    Sbip,
    OneBitEoc,
    OneBitEpBt,
    /// Posts the grid-optimal price; regret control.
    Oracle,
    /// Posts one constant price; linear-regret control.
    Fixed,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::EpBt => "epbt",
            Algorithm::Eoc => "eoc",
            Algorithm::Sbip => "sbip",
            Algorithm::OneBitEoc => "onebit-eoc",
            Algorithm::OneBitEpBt => "onebit-epbt",
            Algorithm::Oracle => "oracle",
            Algorithm::Fixed => "fixed",
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "epbt" => Algorithm::EpBt,
            "eoc" => Algorithm::Eoc,
            "sbip" => Algorithm::Sbip,
            "onebit-eoc" => Algorithm::OneBitEoc,
            "onebit-epbt" => Algorithm::OneBitEpBt,
            "oracle" => Algorithm::Oracle,
            "fixed" => Algorithm::Fixed,
            _ => return Err(format!("unknown algorithm `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Uniform,
    Triangular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    pub a_bound: f64,
    pub b_bound: f64,
    pub noise: NoiseKind,
    pub c: f64,
    pub theta_s: Option<Vec<f64>>,
    pub theta_b: Option<Vec<f64>>,
}

impl MarketConfig {
    pub fn noise_spec(&self) -> crate::error::Result<NoiseSpec> {
        match self.noise {
            NoiseKind::None => Ok(NoiseSpec::None),
            NoiseKind::Uniform => NoiseSpec::uniform(self.c),
            NoiseKind::Triangular => NoiseSpec::triangular(self.c),
        }
    }

    /// `P = C + A·B`
    pub fn price_bound(&self) -> f64 {
        let c = if self.noise == NoiseKind::None { 0.0 } else { self.c };
        c + self.a_bound * self.b_bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextKind {
    Mixed,
    Cyclic,
    Sphere,
    Drift,
    Replay(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextConfig {
    pub kind: ContextKind,
    pub radius: f64,
    pub rate: f64,
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneBitSettings {
    pub alpha: f64,
    pub t_e: Option<f64>,
    pub mode: BudgetMode,
    pub i_base: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub d: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub reps: usize,
    pub out: PathBuf,
    pub market: MarketConfig,
    pub context: ContextConfig,
    pub schedule: ScheduleOverrides,
    pub epbt_eps: Option<f64>,
    pub onebit: OneBitSettings,
    pub oracle_step: f64,
    pub fixed_price: f64,
    pub trace_max_rows: usize,
    /// Every key as written, for the summary echo.
    pub echo: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "T",
    "d",
    "algorithm",
    "seed",
    "reps",
    "out",
    "market.A",
    "market.B",
    "market.noise",
    "market.C",
    "market.theta_s",
    "market.theta_b",
    "context.generator",
    "context.radius",
    "context.rate",
    "context.start",
    "context.file",
    "schedule.eps",
    "schedule.eps_scale",
    "schedule.delta",
    "schedule.mu",
    "schedule.mu_scale",
    "schedule.t_int",
    "schedule.t_int_scale",
    "schedule.t_fd",
    "schedule.t_fd_scale",
    "schedule.K",
    "schedule.eps_tilde",
    "schedule.eps_tilde_factor",
    "epbt.eps",
    "onebit.alpha",
    "onebit.t_e",
    "onebit.budget",
    "onebit.i_base",
    "oracle.step",
    "fixed.price",
    "trace.max_rows",
];

/// Raw key/value pairs with their line numbers.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>, HarnessError> {
    let known: HashSet<&str> = KEYS.iter().copied().collect();
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| HarnessError::config(format!("line {line}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !known.contains(key) {
            return Err(HarnessError::config(format!("line {line}: unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(HarnessError::config(format!("line {line}: `{key}` has no value")));
        }
        if out.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(HarnessError::config(format!("line {line}: duplicate key `{key}`")));
        }
    }
    Ok(out)
}

struct Fields {
    pairs: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.pairs.get(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| HarnessError::config(format!("line {line}: `{key}`: cannot parse `{v}`"))),
        }
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        self.get(key)?.ok_or_else(|| HarnessError::config(format!("missing required key `{key}`")))
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, HarnessError> {
        let v = self.get::<f64>(key)?.unwrap_or(default);
        if !(v > 0.0 && v.is_finite()) {
            return Err(HarnessError::config(format!("`{key}` must be positive and finite, got {v}")));
        }
        Ok(v)
    }

    fn opt_positive(&self, key: &str) -> Result<Option<f64>, HarnessError> {
        match self.get::<f64>(key)? {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                Err(HarnessError::config(format!("`{key}` must be positive and finite, got {v}")))
            }
            v => Ok(v),
        }
    }

    fn vector(&self, key: &str, d: usize) -> Result<Option<Vec<f64>>, HarnessError> {
        let Some((line, v)) = self.raw(key) else { return Ok(None) };
        let parsed: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let parsed = parsed.map_err(|_| HarnessError::config(format!("line {line}: `{key}`: expected comma-separated numbers")))?;
        if parsed.len() != d {
            return Err(HarnessError::config(format!("line {line}: `{key}` has {} entries, d = {d}", parsed.len())));
        }
        Ok(Some(parsed))
    }
}

impl ExperimentConfig {
    /// Parses a configuration; relative `context.file` paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let f = Fields { pairs: parse_pairs(text)? };
        let horizon: usize = f.require("T")?;
        if horizon < 2 {
            return Err(HarnessError::config("`T` must be at least 2"));
        }
        let d: usize = f.require("d")?;
        if d == 0 {
            return Err(HarnessError::config("`d` must be at least 1"));
        }
        let algorithm: Algorithm = f.require("algorithm")?;
        let reps = f.get::<usize>("reps")?.unwrap_or(1);
        if reps == 0 {
            return Err(HarnessError::config("`reps` must be at least 1"));
        }

        let a_bound = f.positive("market.A", 1.0)?;
        let b_bound = f.positive("market.B", 1.0)?;
        let noise = match f.get::<String>("market.noise")?.as_deref().unwrap_or("none") {
            "none" => NoiseKind::None,
            "uniform" => NoiseKind::Uniform,
            "triangular" => NoiseKind::Triangular,
            other => return Err(HarnessError::config(format!("`market.noise`: unknown variant `{other}`"))),
        };
        let c = f.get::<f64>("market.C")?.unwrap_or(0.0);
        if noise != NoiseKind::None && !(c > 0.0 && c.is_finite()) {
            return Err(HarnessError::config(format!("`market.C` must be positive for {noise:?} noise, got {c}")));
        }
        let theta_s = f.vector("market.theta_s", d)?;
        let theta_b = f.vector("market.theta_b", d)?;
        if theta_s.is_some() != theta_b.is_some() {
            return Err(HarnessError::config("`market.theta_s` and `market.theta_b` must be given together"));
        }
        let market = MarketConfig { a_bound, b_bound, noise, c, theta_s, theta_b };

        let radius = f.positive("context.radius", b_bound)?;
        if radius > b_bound {
            return Err(HarnessError::config(format!("`context.radius` = {radius} exceeds `market.B` = {b_bound}")));
        }
        let kind = match f.get::<String>("context.generator")?.as_deref().unwrap_or("mixed") {
            "mixed" => ContextKind::Mixed,
            "cyclic" => ContextKind::Cyclic,
            "sphere" => ContextKind::Sphere,
            "drift" => ContextKind::Drift,
            "replay" => {
                let file: String = f
                    .get("context.file")?
                    .ok_or_else(|| HarnessError::config("`context.generator = replay` needs `context.file`"))?;
                ContextKind::Replay(base_dir.join(file))
            }
            other => return Err(HarnessError::config(format!("`context.generator`: unknown generator `{other}`"))),
        };
        let context = ContextConfig {
            kind,
            radius,
            rate: f.get::<f64>("context.rate")?.unwrap_or(0.01),
            start: f.vector("context.start", d)?,
        };

        let schedule = ScheduleOverrides {
            eps: f.opt_positive("schedule.eps")?,
            eps_scale: f.positive("schedule.eps_scale", 1.0)?,
            delta: f.opt_positive("schedule.delta")?,
            mu: f.opt_positive("schedule.mu")?,
            mu_scale: f.positive("schedule.mu_scale", 1.0)?,
            t_int: f.get("schedule.t_int")?,
            t_int_scale: f.positive("schedule.t_int_scale", 1.0)?,
            t_fd: f.get("schedule.t_fd")?,
            t_fd_scale: f.positive("schedule.t_fd_scale", 1.0)?,
            k: f.get("schedule.K")?,
            eps_tilde: f.get("schedule.eps_tilde")?,
            eps_tilde_factor: f.get("schedule.eps_tilde_factor")?,
        };
        if schedule.t_int == Some(0) || schedule.t_fd == Some(0) {
            return Err(HarnessError::config("`schedule.t_int` and `schedule.t_fd` must be at least 1"));
        }

        let mode = match f.get::<String>("onebit.budget")?.as_deref().unwrap_or("explicit") {
            "explicit" => BudgetMode::Explicit,
            "theorem" => BudgetMode::Theorem,
            other => return Err(HarnessError::config(format!("`onebit.budget`: unknown mode `{other}`"))),
        };
        let alpha = f.positive("onebit.alpha", 1.0)?;
        if alpha > 1.0 {
            return Err(HarnessError::config(format!("`onebit.alpha` must lie in (0, 1], got {alpha}")));
        }
        let t_e = f.get::<f64>("onebit.t_e")?;
        if matches!(t_e, Some(v) if !(v >= 0.0 && v.is_finite())) {
            return Err(HarnessError::config("`onebit.t_e` must be non-negative"));
        }
        let i_base = f.positive("onebit.i_base", 2.0)?;
        if i_base <= 1.0 {
            return Err(HarnessError::config("`onebit.i_base` must exceed 1"));
        }
        let onebit = OneBitSettings { alpha, t_e, mode, i_base };

        let trace_max_rows = f.get::<usize>("trace.max_rows")?.unwrap_or(10_000);
        if trace_max_rows == 0 {
            return Err(HarnessError::config("`trace.max_rows` must be at least 1"));
        }

        Ok(Self {
            horizon,
            d,
            algorithm,
            seed: f.get("seed")?.unwrap_or(0),
            reps,
            out: PathBuf::from(f.get::<String>("out")?.unwrap_or_else(|| "out".into())),
            market,
            context,
            schedule,
            epbt_eps: f.opt_positive("epbt.eps")?,
            onebit,
            oracle_step: f.positive("oracle.step", 1e-3)?,
            fixed_price: f.get("fixed.price")?.unwrap_or(0.0),
            trace_max_rows,
            echo: f.pairs.iter().map(|(k, (_, v))| (k.clone(), v.clone())).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    /// The context generator this configuration describes.
    pub fn context_generator(&self) -> Result<ContextGenerator, HarnessError> {
        let r = self.context.radius;
        Ok(match &self.context.kind {
            ContextKind::Mixed => ContextGenerator::Mixed { radius: r },
            ContextKind::Cyclic => ContextGenerator::CyclicBasis { scale: r },
            ContextKind::Sphere => ContextGenerator::SphereIid { radius: r },
            ContextKind::Drift => {
                let start = match &self.context.start {
                    Some(v) => DVector::from_column_slice(v),
                    None => {
                        let mut e = DVector::zeros(self.d);
                        e[0] = r;
                        e
                    }
                };
                ContextGenerator::Drift { start, rate: self.context.rate }
            }
            ContextKind::Replay(path) => ContextGenerator::Replay {
                rows: crate::market::context::load_replay(path, self.d, self.market.b_bound)
                    .map_err(|e| HarnessError::config(format!("`context.file`: {e}")))?,
            },
        })
    }

    /// Copy with a different horizon and seed, echoing the change.
    pub fn with_run(&self, horizon: usize, seed: u64) -> Self {
        let mut c = self.clone();
        c.horizon = horizon;
        c.seed = seed;
        c.echo.insert("T".into(), horizon.to_string());
        c.echo.insert("seed".into(), seed.to_string());
        c
    }
}
