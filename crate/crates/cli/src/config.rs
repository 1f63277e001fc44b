//! Flat dotted-key configuration.
//!
//! Every key has a type and a default. Values come from the built-in defaults,
//! then the `--config` JSON file, then `--set` pairs, then the named flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Num,
    Int,
    Str(&'static [&'static str]),
    NumList,
}

const ANY: &[&str] = &[];

/// `(key, kind, default)`; `Value::Null` marks an optional key without default.
fn registry() -> Vec<(&'static str, Kind, Value)> {
    use Kind::*;
    let num = |x: f64| Value::Number(Number::from_f64(x).expect("finite default"));
    let int = |x: u64| Value::Number(Number::from(x));
    let s = |x: &str| Value::String(x.to_string());
    let list = |xs: &[f64]| Value::Array(xs.iter().map(|&x| num(x)).collect());
    vec![
        ("landscape.name", Str(ANY), s("two_well")),
        ("landscape.dim", Int, int(1)),
        ("landscape.period", Num, num(1.0)),
        ("landscape.u0", Num, Value::Null),
        ("landscape.a", Num, Value::Null),
        ("landscape.b", Num, Value::Null),
        ("landscape.scale", Num, Value::Null),
        ("landscape.seed", Num, Value::Null),
        ("landscape.order", Num, Value::Null),
        ("potential.kind", Str(&["glued", "boltzmann"]), s("glued")),
        ("potential.m", Num, num(0.25)),
        ("schedule.kind", Str(&["constant", "power", "inverse_gamma"]), s("constant")),
        ("schedule.beta", Num, num(5.0)),
        ("schedule.k", Num, num(1.0)),
        ("schedule.exponent", Num, Value::Null),
        ("schedule.t0", Num, num(1.0)),
        ("schedule.horizon", Num, num(1e6)),
        ("c.kind", Str(&["power", "explicit"]), s("power")),
        ("c.kappa", Num, num(1.0)),
        ("grid.n", Int, int(2048)),
        ("run.t_end", Num, num(50.0)),
        ("run.records", Int, int(50)),
        ("run.spacing", Str(&["uniform", "geometric"]), s("uniform")),
        ("run.t_first", Num, num(1e-3)),
        ("run.profile_times", NumList, list(&[])),
        ("run.seed", Int, int(0)),
        ("run.seeds", Int, int(1)),
        ("pde.init", Str(&["uniform", "random"]), s("uniform")),
        ("solver.policy", Str(&["implicit", "explicit"]), s("implicit")),
        ("solver.dt0", Num, num(1e-6)),
        ("solver.dt_max", Num, num(1.0)),
        ("solver.newton_tol", Num, num(1e-12)),
        ("solver.safety", Num, num(0.4)),
        ("swarm.n", Int, int(4000)),
        ("swarm.h", Num, num(0.02)),
        ("swarm.dt", Num, num(1e-3)),
        ("swarm.record_every", Int, int(100)),
        ("swarm.noise_factor", Num, num(2.0)),
        ("swarm.alpha_cap", Num, num(1e3)),
        ("swarm.r_basin", Num, num(0.25)),
        ("swarm.mu_grid_n", Int, int(1024)),
        ("swarm.h_decay", Num, num(0.0)),
        ("swarm.dump_times", NumList, list(&[])),
        ("swarm.growth_interval", Int, int(0)),
        ("swarm.growth_count", Int, int(0)),
        ("swarm.growth_max_n", Int, int(0)),
        ("check.betas", NumList, list(&[1.0, 5.0, 20.0])),
        ("check.ms", NumList, list(&[0.1, 0.25, 0.4])),
        ("check.count", Int, int(112)),
        ("check.grid_n", Int, int(2048)),
        ("check.slack", Num, num(1e-3)),
        ("check.order", Int, int(8)),
        ("check.kappa_tal", Num, num(1.0)),
        ("lyapunov.v0", Num, num(1.0)),
        ("lyapunov.delta", Num, num(0.0)),
        ("lyapunov.t0", Num, num(1.0)),
        ("lyapunov.records", Int, int(61)),
    ]
}

/// A fully validated key/value table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, Value>,
}

fn check(key: &str, kind: Kind, value: Value) -> Result<Value, ConfigError> {
    let bad = |what: &str| ConfigError::new(format!("`{key}` must be {what}, got {value}"));
    match kind {
        Kind::Num => match &value {
            Value::Number(n) if n.as_f64().is_some_and(f64::is_finite) => {
                Ok(Value::Number(Number::from_f64(n.as_f64().unwrap_or_default()).expect("finite")))
            }
            Value::String(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .and_then(Number::from_f64)
                .map(Value::Number)
                .ok_or_else(|| bad("a finite number")),
            _ => Err(bad("a finite number")),
        },
        Kind::Int => {
            let x = match &value {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            };
            match x {
                Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 => Ok(Value::Number(Number::from(x as u64))),
                _ => Err(bad("a nonnegative integer")),
            }
        }
        Kind::Str(choices) => match &value {
            Value::String(s) if choices.is_empty() || choices.contains(&s.as_str()) => Ok(value),
            _ if choices.is_empty() => Err(bad("a string")),
            _ => Err(bad(&format!("one of {}", choices.join(", ")))),
        },
        Kind::NumList => {
            let items: Vec<Value> = match &value {
                Value::Array(xs) => xs.clone(),
                Value::String(s) if s.trim().is_empty() => Vec::new(),
                Value::String(s) => s.split(',').map(|p| Value::String(p.to_string())).collect(),
                Value::Number(_) => vec![value.clone()],
                _ => return Err(bad("a list of numbers")),
            };
            let nums = items
                .into_iter()
                .map(|v| check(key, Kind::Num, v))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("a list of finite numbers"))?;
            Ok(Value::Array(nums))
        }
    }
}

/// Parses a `--set` value: JSON when it parses, a bare string otherwise.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Applies `overrides` in order on top of the defaults and validates each.
    pub fn build(overrides: impl IntoIterator<Item = (String, Value)>) -> Result<Self, ConfigError> {
        let reg = registry();
        let mut values: BTreeMap<String, Value> = reg
            .iter()
            .filter(|(_, _, d)| !d.is_null())
            .map(|(k, _, d)| (k.to_string(), d.clone()))
            .collect();
        for (key, value) in overrides {
            let (_, kind, _) = reg
                .iter()
                .find(|(k, _, _)| *k == key)
                .ok_or_else(|| ConfigError::new(format!("unknown config key `{key}`")))?;
            values.insert(key.clone(), check(&key, *kind, value)?);
        }
        Ok(Self { values })
    }

    /// Reads a flat JSON object of dotted keys.
    pub fn read_file(path: &Path) -> Result<Vec<(String, Value)>, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new(format!("{} is not valid JSON: {e}", path.display())))?;
        match parsed {
            Value::Object(map) => Ok(map.into_iter().collect()),
            _ => Err(ConfigError::new("the config file must hold a flat JSON object")),
        }
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.values.clone().into_iter().collect::<Map<_, _>>())
    }

    pub fn num(&self, key: &str) -> f64 {
        self.values[key].as_f64().expect("validated number")
    }

    pub fn opt_num(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(Value::as_f64)
    }

    pub fn int(&self, key: &str) -> u64 {
        self.values[key].as_u64().expect("validated integer")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    pub fn str(&self, key: &str) -> &str {
        self.values[key].as_str().expect("validated string")
    }

    pub fn list(&self, key: &str) -> Vec<f64> {
        self.values[key]
            .as_array()
            .expect("validated list")
            .iter()
            .map(|v| v.as_f64().expect("validated number"))
            .collect()
    }

    /// Landscape parameters that were set explicitly.
    pub fn landscape_params(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .filter_map(|(k, v)| {
                let name = k.strip_prefix("landscape.")?;
                match name {
                    "name" | "dim" | "period" => None,
                    _ => Some((name.to_string(), v.as_f64()?)),
                }
            })
            .collect()
    }
}
