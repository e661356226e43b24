//! Plain-text `key = value` configs and their resolution against the keys a
//! subcommand declares.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use crate::env::{ContinuousLaw, DistKind, WeightDistribution};
use crate::error::{invalid, Error, Result};

/// Raw, unvalidated settings; a later `set` overrides an earlier value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return invalid(format!("config line {}: expected key = value, got {line:?}", i + 1));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return invalid(format!("config line {}: empty key", i + 1));
            }
            if cfg.entries.insert(k.to_string(), v.to_string()).is_some() {
                return invalid(format!("config line {}: key {k} given twice", i + 1));
            }
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let Some((k, v)) = pair.split_once('=') else {
            return invalid(format!("override {pair:?} is not key=value"));
        };
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Pulls typed values out of a [`Config`], recording the resolved value of
/// every key (defaults included) and rejecting keys nobody asked for.
pub struct Resolver<'a> {
    cfg: &'a Config,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Resolver { cfg, used: BTreeSet::new(), resolved: BTreeMap::new() }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.cfg.get(key)
    }

    fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Any value with a `FromStr`/`Display` round trip.
    pub fn value<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s.parse::<T>().map_err(|e| Error::Invalid(format!("{key} = {s:?}: {e}")))?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`Resolver::value`] but `none` means absent.
    pub fn optional<T>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some("none") => None,
            Some(s) => Some(s.parse::<T>().map_err(|e| Error::Invalid(format!("{key} = {s:?}: {e}")))?),
            None => default,
        };
        match &v {
            Some(x) => self.record(key, x),
            None => self.record(key, "none"),
        }
        Ok(v)
    }

    /// Comma-separated list.
    pub fn list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<T>().map_err(|e| Error::Invalid(format!("{key} item {p:?}: {e}"))))
                .collect::<Result<Vec<T>>>()?,
            None => default.to_vec(),
        };
        if v.is_empty() {
            return invalid(format!("{key} must not be empty"));
        }
        let text: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        self.record(key, text.join(","));
        Ok(v)
    }

    /// The weight law from the `dist.*` keys; only the keys of the chosen
    /// kind are accepted.
    pub fn dist(&mut self) -> Result<WeightDistribution> {
        let kind: String = self.value("dist.kind", "constant".to_string())?;
        let dk = match kind.as_str() {
            "constant" => DistKind::Constant { c: self.value("dist.c", 1.0)? },
            "site" => DistKind::TwoPoint { a: 1.0, b: 0.0, p: self.value("dist.p", 0.5)? },
            "two-point" => DistKind::TwoPoint {
                a: self.value("dist.a", 1.0)?,
                b: self.value("dist.b", 0.0)?,
                p: self.value("dist.p", 0.5)?,
            },
            "table" => {
                let values = self.list::<f64>("dist.values", &[1.0])?;
                let probs = self.list::<f64>("dist.probs", &[1.0])?;
                DistKind::Table { values, probs }
            }
            "uniform" => DistKind::Quadrature {
                law: ContinuousLaw::Uniform { lo: self.value("dist.lo", 0.0)?, hi: self.value("dist.hi", 1.0)? },
                nodes: self.value("dist.nodes", 16)?,
            },
            "beta" => DistKind::Quadrature {
                law: ContinuousLaw::Beta {
                    alpha: self.value("dist.alpha", 2.0)?,
                    beta: self.value("dist.beta", 2.0)?,
                    scale: self.value("dist.scale", 1.0)?,
                },
                nodes: self.value("dist.nodes", 16)?,
            },
            other => {
                return invalid(format!(
                    "dist.kind {other:?} is not one of constant, site, two-point, table, uniform, beta"
                ))
            }
        };
        WeightDistribution::new(dk)
    }

    /// Fails on keys that were set but never read; returns the resolved map.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        let unknown: Vec<&String> = self.cfg.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            return invalid(format!("unknown config keys: {}", names.join(", ")));
        }
        Ok(self.resolved)
    }
}
