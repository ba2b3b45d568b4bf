use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

/// Reads a JSON config, falling back to `T::default()` when no path is given.
/// Type errors carry the offending field path.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize(de) {
        Ok(v) => Ok(v),
        Err(e) => {
            let path = e.path().to_string();
            bail!("config field `{path}`: {}", e.into_inner())
        }
    }
}

pub fn positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("config field `{field}`: must be positive and finite, got {v}");
    }
    Ok(())
}

pub fn nonzero(field: &str, n: usize) -> Result<()> {
    if n == 0 {
        bail!("config field `{field}`: must be at least 1");
    }
    Ok(())
}

pub fn in_open_unit(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        bail!("config field `{field}`: must lie in (0, 1), got {v}");
    }
    Ok(())
}

/// Non-empty, positive, strictly decreasing.
pub fn eps_list(field: &str, list: &[f64]) -> Result<()> {
    if list.is_empty() {
        bail!("config field `{field}`: must not be empty");
    }
    for (k, &e) in list.iter().enumerate() {
        positive(&format!("{field}[{k}]"), e)?;
    }
    if let Some(k) = list.windows(2).position(|w| w[1] >= w[0]) {
        bail!("config field `{field}[{}]`: list must be strictly decreasing", k + 1);
    }
    Ok(())
}

pub fn time_grid(prefix: &str, t_end: f64, dt: f64) -> Result<()> {
    positive(&format!("{prefix}t_end"), t_end)?;
    positive(&format!("{prefix}dt"), dt)?;
    if dt > t_end {
        bail!("config field `{prefix}dt`: exceeds t_end");
    }
    Ok(())
}
