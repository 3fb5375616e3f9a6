//! TOML configuration: strict parsing, overrides and the reproducibility echo.

use std::fs;
use std::path::{Path, PathBuf};

use platoon_core::params::validate_params;
use platoon_core::SimParams;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, key: String },
    #[error("invalid parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot serialize effective config: {0}")]
    Echo(String),
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, params: &mut SimParams) {
        if let Some(seed) = self.seed {
            params.seed = seed;
        }
        if let Some(duration) = self.duration {
            params.duration = duration;
        }
        if let Some(dt) = self.dt {
            params.dt = dt;
        }
    }
}

/// Everything a `run` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub config_path: PathBuf,
    pub overrides: Overrides,
    pub out_dir: PathBuf,
    /// Time window `[t_a, t_b]` of the time-space plot, if requested.
    pub plot: Option<(f64, f64)>,
}

impl RunConfig {
    /// Parse the file, apply overrides and validate the result.
    pub fn effective_params(&self) -> Result<SimParams, ConfigError> {
        let text = read(&self.config_path)?;
        let mut params = parse_unvalidated(&text, &self.config_path)?;
        self.overrides.apply(&mut params);
        validate(&params)?;
        Ok(params)
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<SimParams, ConfigError> {
    let text = read(path)?;
    parse_config_str(&text, path)
}

/// Parse config text; `origin` only labels error messages.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<SimParams, ConfigError> {
    let params = parse_unvalidated(text, origin)?;
    validate(&params)?;
    Ok(params)
}

fn parse_unvalidated(text: &str, origin: &Path) -> Result<SimParams, ConfigError> {
    let parse_err = |message: String| ConfigError::Parse {
        path: origin.to_path_buf(),
        message,
    };
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    let schema = match Value::try_from(SimParams::default()) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("SimParams serializes to a table"),
    };
    if let Some(key) = unknown_key(&table, &schema, "") {
        return Err(ConfigError::UnknownKey {
            path: origin.to_path_buf(),
            key,
        });
    }
    toml::from_str(text).map_err(|e: toml::de::Error| parse_err(e.to_string()))
}

fn unknown_key(given: &Table, schema: &Table, prefix: &str) -> Option<String> {
    for (key, value) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, schema.get(key)) {
            (_, None) => return Some(path),
            (Value::Table(inner), Some(Value::Table(known))) => {
                if let Some(bad) = unknown_key(inner, known, &path) {
                    return Some(bad);
                }
            }
            _ => {}
        }
    }
    None
}

fn validate(params: &SimParams) -> Result<(), ConfigError> {
    validate_params(params).map_err(|violations| {
        ConfigError::Invalid(
            violations
                .iter()
                .map(|v| format!("{} (keys: {})", v.invariant, v.keys.join(", ")))
                .collect(),
        )
    })
}

/// TOML text that parses back to exactly `params`.
pub fn echo(params: &SimParams) -> Result<String, ConfigError> {
    toml::to_string(params).map_err(|e| ConfigError::Echo(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SimParams, ConfigError> {
        parse_config_str(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), SimParams::default());
    }

    #[test]
    fn highway_scenario() {
        let p = parse(
            "[road]\nlength = 1750.0\non_ramps = [100.0, 600.0, 1100.0]\noff_ramps = [500.0, 1000.0, 1500.0]\n",
        )
        .unwrap();
        assert_eq!(p.road.length, 1750.0);
        assert_eq!(p.road.on_ramps, vec![100.0, 600.0, 1100.0]);
        assert_eq!(p.road.off_ramps, vec![500.0, 1000.0, 1500.0]);
    }

    #[test]
    fn inverted_speeds_name_both_keys() {
        let msg = parse("v_min = 30.0\nv_max = 20.0\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("v_min") && msg.contains("v_max"), "{msg}");
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = parse("[drag]\nc3 = 1.0\n").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { key, .. } if key == "drag.c3"));
        let err = parse("vmax = 30.0\n").unwrap_err();
        assert!(err.to_string().contains("`vmax`"));
    }

    #[test]
    fn type_errors_mention_the_key() {
        let msg = parse("dt = \"fast\"\n").unwrap_err().to_string();
        assert!(msg.contains("dt"), "{msg}");
    }

    #[test]
    fn echo_round_trips() {
        let p = SimParams {
            seed: 42,
            dt: 0.05,
            eps_g: 1.0 / 3.0,
            pred_accel: platoon_core::PredAccelSource::WorstCase,
            ..SimParams::default()
        };
        let text = echo(&p).unwrap();
        assert_eq!(parse(&text).unwrap(), p);
    }

    #[test]
    fn overrides_win() {
        let mut p = SimParams::default();
        Overrides {
            seed: Some(9),
            duration: Some(10.0),
            dt: None,
        }
        .apply(&mut p);
        assert_eq!((p.seed, p.duration, p.dt), (9, 10.0, 0.1));
    }
}
