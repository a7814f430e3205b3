//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown, duplicate or out-of-range keys are rejected with a message naming
//! the key and its line.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::burgers::{Advection, BurgersConfig, GammaMode, MaternConfig};
use crate::error::{Error, Result};
use crate::fno::FnoConfig;
use crate::train::{CovConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: BurgersConfig,
    pub instances: usize,
    pub test_instances: usize,
    pub model: FnoConfig,
    pub cov: CovConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = BurgersConfig {
            n: 128,
            gamma_mode: GammaMode::Fixed { value: 0.4 },
            ..BurgersConfig::default()
        };
        RunConfig {
            model: FnoConfig {
                tau: 4,
                h: 5,
                delta: data.delta,
                n: data.n,
                dv: 16,
                layers: 3,
                modes_space: 16,
                modes_time: 4,
            },
            data,
            instances: 220,
            test_instances: 20,
            cov: CovConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_ini`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "grid.n",
    "data.instances",
    "data.test_instances",
    "data.T",
    "data.delta",
    "data.dt_sim",
    "data.gamma_mode",
    "data.gamma_lo",
    "data.gamma_hi",
    "data.gamma_fixed",
    "data.advection",
    "ic.variance",
    "ic.lengthscale",
    "ic.nu",
    "model.dv",
    "model.layers",
    "model.modes_space",
    "model.modes_time",
    "model.tau",
    "model.h",
    "cov.hidden",
    "cov.alpha_r_init",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.batch",
    "train.epochs",
    "train.warmup_mse_epochs",
    "train.grad_clip",
    "train.holdout",
];

fn bad(line: usize, key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {key}: {msg}"))
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(line, key, format!("cannot parse {value:?}: {e}")))
}

/// A parsed value must satisfy `ok`.
fn checked<T: FromStr + Copy + std::fmt::Display>(
    line: usize,
    key: &str,
    value: &str,
    ok: impl Fn(T) -> bool,
    rule: &str,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let v: T = parse(line, key, value)?;
    if ok(v) {
        Ok(v)
    } else {
        Err(bad(line, key, format!("{v} is out of range ({rule})")))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        let (mut mode, mut lo, mut hi, mut fixed) = (None::<String>, None, None, None);
        let mut mode_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got {body:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(bad(line, key, "unknown key"));
            };
            if seen.contains(&known) {
                return Err(bad(line, key, "duplicate key"));
            }
            seen.push(known);
            let pos_int = |v: usize| v >= 1;
            match key {
                "seed" => c.seed = parse(line, key, value)?,
                "grid.n" => {
                    c.data.n = checked(line, key, value, |v: usize| v.is_power_of_two() && (2..=2048).contains(&v), "power of two in 2..=2048")?
                }
                "data.instances" => c.instances = checked(line, key, value, pos_int, ">= 1")?,
                "data.test_instances" => c.test_instances = parse(line, key, value)?,
                "data.T" => c.data.t_model = checked(line, key, value, pos_int, ">= 1")?,
                "data.delta" => c.data.delta = checked(line, key, value, positive, "> 0")?,
                "data.dt_sim" => {
                    c.data.dt_sim = match value {
                        "auto" => None,
                        _ => Some(checked(line, key, value, positive, "> 0 or auto")?),
                    }
                }
                "data.gamma_mode" => {
                    if value != "random" && value != "fixed" {
                        return Err(bad(line, key, format!("{value:?} is not one of random, fixed")));
                    }
                    mode = Some(value.to_string());
                    mode_line = line;
                }
                "data.gamma_lo" => lo = Some(checked(line, key, value, |v: f64| v.is_finite() && v >= 0.0, ">= 0")?),
                "data.gamma_hi" => hi = Some(checked(line, key, value, positive, "> 0")?),
                "data.gamma_fixed" => fixed = Some(checked(line, key, value, |v: f64| v.is_finite() && v >= 0.0, ">= 0")?),
                "data.advection" => {
                    c.data.advection = match value {
                        "conservative" => Advection::Conservative,
                        "advective" => Advection::Advective,
                        _ => return Err(bad(line, key, format!("{value:?} is not one of conservative, advective"))),
                    }
                }
                "ic.variance" => c.data.ic.variance = checked(line, key, value, positive, "> 0")?,
                "ic.lengthscale" => c.data.ic.lengthscale = checked(line, key, value, positive, "> 0")?,
                "ic.nu" => c.data.ic.nu = checked(line, key, value, |v: f64| positive(v) && v <= 50.0, "0 < nu <= 50")?,
                "model.dv" => c.model.dv = checked(line, key, value, |v: usize| v > 3, "> d + 2 = 3")?,
                "model.layers" => c.model.layers = checked(line, key, value, pos_int, ">= 1")?,
                "model.modes_space" => c.model.modes_space = checked(line, key, value, pos_int, ">= 1")?,
                "model.modes_time" => c.model.modes_time = checked(line, key, value, pos_int, ">= 1")?,
                "model.tau" => c.model.tau = parse(line, key, value)?,
                "model.h" => c.model.h = checked(line, key, value, pos_int, ">= 1")?,
                "cov.hidden" => c.cov.hidden = checked(line, key, value, pos_int, ">= 1")?,
                "cov.alpha_r_init" => c.cov.alpha_r_init = checked(line, key, value, positive, "> 0")?,
                "train.lr" => c.train.lr = checked(line, key, value, positive, "> 0")?,
                "train.beta1" => c.train.beta1 = checked(line, key, value, |v: f64| (0.0..1.0).contains(&v), "[0, 1)")?,
                "train.beta2" => c.train.beta2 = checked(line, key, value, |v: f64| (0.0..1.0).contains(&v), "[0, 1)")?,
                "train.eps" => c.train.eps = checked(line, key, value, positive, "> 0")?,
                "train.batch" => c.train.batch = checked(line, key, value, pos_int, ">= 1")?,
                "train.epochs" => c.train.epochs = parse(line, key, value)?,
                "train.warmup_mse_epochs" => c.train.warmup_mse_epochs = parse(line, key, value)?,
                "train.grad_clip" => c.train.grad_clip = checked(line, key, value, positive, "> 0")?,
                "train.holdout" => c.train.holdout = checked(line, key, value, |v: f64| (0.0..1.0).contains(&v), "[0, 1)")?,
                _ => unreachable!("key list and match arms disagree on {key}"),
            }
        }

        let gamma_line = |k: &str| format!("data.{k}");
        match mode.as_deref() {
            Some("random") => {
                let (lo, hi) = match (lo, hi) {
                    (Some(l), Some(h)) => (l, h),
                    _ => return Err(bad(mode_line, "data.gamma_mode", "random needs data.gamma_lo and data.gamma_hi")),
                };
                if lo >= hi {
                    return Err(Error::Config(format!("{}: {lo} must be below data.gamma_hi = {hi}", gamma_line("gamma_lo"))));
                }
                if fixed.is_some() {
                    return Err(Error::Config("data.gamma_fixed: not used when data.gamma_mode = random".into()));
                }
                c.data.gamma_mode = GammaMode::RandomUniform { lo, hi };
            }
            Some(_) => {
                let value = fixed.ok_or_else(|| bad(mode_line, "data.gamma_mode", "fixed needs data.gamma_fixed"))?;
                if lo.is_some() || hi.is_some() {
                    return Err(Error::Config("data.gamma_lo: not used when data.gamma_mode = fixed".into()));
                }
                c.data.gamma_mode = GammaMode::Fixed { value };
            }
            None => {
                if lo.is_some() || hi.is_some() || fixed.is_some() {
                    return Err(Error::Config("data.gamma_mode: must be given when gamma values are set".into()));
                }
            }
        }
        c.model.n = c.data.n;
        c.model.delta = c.data.delta;
        c.train.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    /// Cross-key checks.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.test_instances >= self.instances {
            return Err(Error::Config(format!(
                "data.test_instances: {} leaves no training instances out of {}",
                self.test_instances, self.instances
            )));
        }
        if self.data.t_model <= self.model.tau + self.model.h {
            return Err(Error::Config(format!(
                "data.T: {} must exceed model.tau + model.h = {}",
                self.data.t_model,
                self.model.tau + self.model.h
            )));
        }
        if self.model.n != self.data.n || self.model.delta != self.data.delta {
            return Err(Error::Config("model grid and data grid disagree".into()));
        }
        self.model.validate()?;
        self.model.validate_width()?;
        self.train.validate()?;
        Ok(())
    }

    /// Every key with its effective value; parsing the output gives back
    /// an equal configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        let d = &self.data;
        kv("seed", self.seed.to_string());
        kv("grid.n", d.n.to_string());
        kv("data.instances", self.instances.to_string());
        kv("data.test_instances", self.test_instances.to_string());
        kv("data.T", d.t_model.to_string());
        kv("data.delta", format!("{:?}", d.delta));
        kv("data.dt_sim", d.dt_sim.map_or("auto".into(), |v| format!("{v:?}")));
        match d.gamma_mode {
            GammaMode::RandomUniform { lo, hi } => {
                kv("data.gamma_mode", "random".into());
                kv("data.gamma_lo", format!("{lo:?}"));
                kv("data.gamma_hi", format!("{hi:?}"));
            }
            GammaMode::Fixed { value } => {
                kv("data.gamma_mode", "fixed".into());
                kv("data.gamma_fixed", format!("{value:?}"));
            }
        }
        kv(
            "data.advection",
            match d.advection {
                Advection::Conservative => "conservative",
                Advection::Advective => "advective",
            }
            .into(),
        );
        let MaternConfig { variance, lengthscale, nu } = d.ic;
        kv("ic.variance", format!("{variance:?}"));
        kv("ic.lengthscale", format!("{lengthscale:?}"));
        kv("ic.nu", format!("{nu:?}"));
        let m = &self.model;
        kv("model.dv", m.dv.to_string());
        kv("model.layers", m.layers.to_string());
        kv("model.modes_space", m.modes_space.to_string());
        kv("model.modes_time", m.modes_time.to_string());
        kv("model.tau", m.tau.to_string());
        kv("model.h", m.h.to_string());
        kv("cov.hidden", self.cov.hidden.to_string());
        kv("cov.alpha_r_init", format!("{:?}", self.cov.alpha_r_init));
        let t = &self.train;
        kv("train.lr", format!("{:?}", t.lr));
        kv("train.beta1", format!("{:?}", t.beta1));
        kv("train.beta2", format!("{:?}", t.beta2));
        kv("train.eps", format!("{:?}", t.eps));
        kv("train.batch", t.batch.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.warmup_mse_epochs", t.warmup_mse_epochs.to_string());
        kv("train.grad_clip", format!("{:?}", t.grad_clip));
        kv("train.holdout", format!("{:?}", t.holdout));
        s
    }
}
