//! Flat `key=value` run configuration with `#` comments.
//!
//! Precedence: command-line flags override file values; the `EXKIN_SEED`
//! environment variable overrides both (for CI).

use std::collections::BTreeMap;
use std::path::Path;

use exkin_core::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected `key=value`, got `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }
}

/// Flag value, then file value, then default.
pub fn resolve<T: Clone + std::str::FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: Option<T>,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = file.parse::<T>(key)? {
        return Ok(v);
    }
    default.ok_or_else(|| Error::Config(format!("missing required parameter `{key}`")))
}

/// The seed is mandatory and has no wall-clock fallback; `EXKIN_SEED`
/// overrides every other source.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64> {
    if let Ok(env) = std::env::var("EXKIN_SEED") {
        return env
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("EXKIN_SEED: cannot parse `{env}`")));
    }
    resolve(flag, file, "seed", None)
        .map_err(|_| Error::Config("seed is required (flag --seed, config `seed=`, or EXKIN_SEED)".into()))
}
