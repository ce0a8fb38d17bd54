//! Experiment-config parsing: JSON in, typed values out, with error messages
//! that name the offending path. Configs hash via FNV-1a over a canonical
//! (key-sorted, compact) rendering, so the hash is stable across platforms
//! and field order.

use num_rational::BigRational;
use serde_json::Value;
use surfmix_core::dynamics::{BiasField, StartSpec};
use surfmix_core::numeric::parse_rat;
use surfmix_core::region::{Region, RegionSpec};

pub type Rat = BigRational;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

pub fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        Value::String((*k).clone()),
                        canonical_json(&map[*k])
                    )
                })
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", inner.join(","))
        }
        other => other.to_string(),
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

pub fn config_hash(v: &Value) -> String {
    format!("{:016x}", fnv1a64(canonical_json(v).as_bytes()))
}

pub fn require<'v>(v: &'v Value, path: &str) -> Result<&'v Value, ConfigError> {
    v.get(path)
        .ok_or_else(|| ConfigError(format!("{path}: missing required field")))
}

pub fn as_u64(v: &Value, path: &str) -> Result<u64, ConfigError> {
    v.as_u64()
        .ok_or_else(|| ConfigError(format!("{path}: expected a nonnegative integer")))
}

pub fn u64_or(v: &Value, path: &str, default: u64) -> Result<u64, ConfigError> {
    match v.get(path) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => as_u64(x, path),
    }
}

pub fn bool_or(v: &Value, path: &str, default: bool) -> Result<bool, ConfigError> {
    match v.get(path) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(ConfigError(format!("{path}: expected a boolean"))),
    }
}

pub fn rat_value(v: &Value, path: &str) -> Result<Rat, ConfigError> {
    let parsed = match v {
        Value::String(s) => parse_rat(s),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                parse_rat(&i.to_string())
            } else {
                n.as_f64().and_then(BigRational::from_float)
            }
        }
        _ => None,
    };
    parsed.ok_or_else(|| {
        ConfigError(format!(
            "{path}: expected a rational (integer, float, or \"p/q\")"
        ))
    })
}

pub fn rat_or(v: &Value, path: &str, default: Rat) -> Result<Rat, ConfigError> {
    match v.get(path) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => rat_value(x, path),
    }
}

pub fn parse_region(config: &Value) -> Result<Region, ConfigError> {
    let raw = require(config, "region")?;
    let spec: RegionSpec =
        serde_json::from_value(raw.clone()).map_err(|e| ConfigError(format!("region: {e}")))?;
    spec.build()
        .map_err(|e| ConfigError(format!("region: {e}")))
}

/// Bias spec: `{"uniform": r}` or
/// `{"per_site": {"default": r, "sites": [{"cube": [..], "lambda": r}]}}`.
pub fn parse_bias(config: &Value, region: &Region) -> Result<BiasField, ConfigError> {
    let raw = require(config, "bias")?;
    if let Some(u) = raw.get("uniform") {
        let lambda = rat_value(u, "bias.uniform")?;
        return BiasField::uniform(region, lambda)
            .map_err(|e| ConfigError(format!("bias.uniform: {e}")));
    }
    if let Some(ps) = raw.get("per_site") {
        let default = rat_or(ps, "default", Rat::from_integer(1.into()))?;
        let mut table = std::collections::HashMap::new();
        let sites = require(ps, "sites")?
            .as_array()
            .ok_or_else(|| ConfigError("bias.per_site.sites: expected an array".into()))?;
        for (i, site) in sites.iter().enumerate() {
            let cube: Vec<i64> = require(site, "cube")?
                .as_array()
                .ok_or_else(|| {
                    ConfigError(format!("bias.per_site.sites[{i}].cube: expected an array"))
                })?
                .iter()
                .map(|c| c.as_i64())
                .collect::<Option<Vec<i64>>>()
                .ok_or_else(|| {
                    ConfigError(format!("bias.per_site.sites[{i}].cube: expected integers"))
                })?;
            let lambda = rat_value(
                require(site, "lambda")?,
                &format!("bias.per_site.sites[{i}].lambda"),
            )?;
            table.insert(cube, lambda);
        }
        return BiasField::per_site(region, |p| {
            table.get(p).cloned().unwrap_or_else(|| default.clone())
        })
        .map_err(|e| ConfigError(format!("bias.per_site: {e}")));
    }
    Err(ConfigError(
        "bias: expected \"uniform\" or \"per_site\"".into(),
    ))
}

pub fn parse_start(config: &Value, region: &Region, path: &str) -> Result<StartSpec, ConfigError> {
    let spec = match config.get(path) {
        None | Some(Value::Null) => StartSpec::Empty,
        Some(Value::String(s)) if s == "empty" => StartSpec::Empty,
        Some(Value::String(s)) if s == "full" => StartSpec::Full,
        Some(Value::Array(items)) => {
            let counts: Vec<u32> = items
                .iter()
                .map(|c| c.as_u64().map(|x| x as u32))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| ConfigError(format!("{path}: expected integer counts")))?;
            StartSpec::Counts(counts)
        }
        Some(_) => {
            return Err(ConfigError(format!(
                "{path}: expected \"empty\", \"full\", or counts"
            )))
        }
    };
    if spec.build(region).is_none() {
        return Err(ConfigError(format!(
            "{path}: not a valid downset of the region"
        )));
    }
    Ok(spec)
}

/// Enumeration cap: config field, overridden by SURFMIX_ENUM_CAP.
pub fn enum_cap(config: &Value) -> Result<usize, ConfigError> {
    let from_cfg = u64_or(config, "cap", surfmix_core::region::DEFAULT_ENUM_CAP as u64)?;
    match std::env::var("SURFMIX_ENUM_CAP") {
        Ok(s) => s
            .parse::<usize>()
            .map_err(|_| ConfigError("SURFMIX_ENUM_CAP: expected an integer".into())),
        Err(_) => Ok(from_cfg as usize),
    }
}
