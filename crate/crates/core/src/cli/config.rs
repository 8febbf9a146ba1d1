//! Experiment configuration: one TOML document with a section per module.
//!
//! Keys may be written as `[section]` tables or dotted (`train.gamma = 0.9`).
//! Unknown keys and type mismatches are rejected with the key and its line;
//! missing keys take their defaults. Environment variables of the form
//! `DEAR_SECTION__KEY` (nested levels joined by `__`) override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;

pub const ENV_PREFIX: &str = "DEAR_";

/// A validated configuration plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: Option<PathBuf>,
    /// Hex sha256 of the canonical serialization.
    pub digest: String,
    /// Keys filled from defaults.
    pub defaulted: Vec<String>,
    /// Keys set from the environment.
    pub overridden: Vec<String>,
}

/// Canonical TOML text of a configuration.
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| config_err("", 0, format!("cannot serialize config: {e}")))
}

pub fn digest(cfg: &ExperimentConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_toml(cfg)?.as_bytes())))
}

fn config_err(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads and validates a config file; `None` means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let vars: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    let mut loaded = parse_config(&text, &vars)?;
    loaded.source = path.map(Path::to_path_buf);
    Ok(loaded)
}

/// Parses config text with the given `DEAR_*` overrides.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<LoadedConfig> {
    let lines = key_lines(text);
    let line_of = |key: &str| lines.get(key).copied().unwrap_or(0);
    let mut user: Table = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
        config_err("", line, e.message().trim().to_string())
    })?;

    let mut overridden = Vec::new();
    for (var, raw) in overrides {
        let key = env_key(var)?;
        set_path(&mut user, &key, parse_scalar(raw)).map_err(|m| config_err(&key, 0, m))?;
        overridden.push(key);
    }

    let defaults = Table::try_from(ExperimentConfig::default())
        .map_err(|e| config_err("", 0, format!("cannot serialize defaults: {e}")))?;
    check_keys(&mut user, &defaults, "", &line_of)?;

    let mut defaulted = Vec::new();
    let mut merged = defaults.clone();
    merge(&mut merged, &user, &defaults, "", &mut defaulted);
    if !defaulted.is_empty() {
        log::info!("config: {} keys not set, using defaults", defaulted.len());
        log::debug!("config: defaulted keys: {}", defaulted.join(", "));
    }

    let config: ExperimentConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
        let message = e.message().trim().to_string();
        let key = string_leaves(&user, "")
            .into_iter()
            .find(|(_, v)| message.contains(&format!("`{v}`")))
            .map(|(k, _)| k)
            .unwrap_or_default();
        config_err(&key, line_of(&key), message)
    })?;
    validate(&config).map_err(|e| match e {
        Error::Precondition(msg) => {
            let key = msg
                .split_whitespace()
                .find(|w| w.contains('.'))
                .map(|w| w.trim_end_matches([':', ',']).to_string())
                .unwrap_or_default();
            let line = line_of(&key);
            let message = msg.strip_prefix(&format!("{key}: ")).unwrap_or(&msg).to_string();
            config_err(&key, line, message)
        }
        other => other,
    })?;
    Ok(LoadedConfig {
        digest: digest(&config)?,
        config,
        source: None,
        defaulted,
        overridden,
    })
}

/// Checks every module section plus cross-section consistency.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.env.validate()?;
    cfg.behavior.validate()?;
    cfg.train.validate()?;
    if cfg.env.list_len != cfg.train.dims.list_len {
        return Err(Error::Precondition("train.dims.list_len must equal env.list_len".into()));
    }
    if cfg.eval.episodes == 0 {
        return Err(Error::Precondition("eval.episodes must be positive".into()));
    }
    if cfg.log_sessions == 0 {
        return Err(Error::Precondition("log_sessions must be positive".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Precondition("seeds must not be empty".into()));
    }
    Ok(())
}

/// `DEAR_TRAIN__ADAM__LEARNING_RATE` -> `train.adam.learning_rate`.
fn env_key(var: &str) -> Result<String> {
    let rest = var.strip_prefix(ENV_PREFIX).unwrap_or(var);
    if rest.is_empty() || rest.split("__").any(str::is_empty) {
        return Err(config_err(var, 0, "malformed environment override name"));
    }
    Ok(rest.split("__").map(str::to_ascii_lowercase).collect::<Vec<_>>().join("."))
}

/// Reads an override value as a TOML literal, falling back to a bare string.
fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

/// Rejects keys absent from the defaults and values of the wrong type.
/// Integers are accepted (and converted) where a float is expected.
fn check_keys(user: &mut Table, defaults: &Table, prefix: &str, line_of: &dyn Fn(&str) -> usize) -> Result<()> {
    for (k, v) in user.iter_mut() {
        let path = join(prefix, k);
        let Some(d) = defaults.get(k) else {
            return Err(config_err(&path, line_of(&path), "unknown key"));
        };
        check_value(v, d, &path, line_of)?;
    }
    Ok(())
}

fn check_value(v: &mut Value, d: &Value, path: &str, line_of: &dyn Fn(&str) -> usize) -> Result<()> {
    let mismatch = |v: &Value| {
        config_err(
            path,
            line_of(path),
            format!("expected {}, found {}", type_name(d), type_name(v)),
        )
    };
    match (v, d) {
        (Value::Table(u), Value::Table(dt)) => check_keys(u, dt, path, line_of),
        (v @ Value::Integer(_), Value::Float(_)) => {
            let i = v.as_integer().expect("matched integer");
            *v = Value::Float(i as f64);
            Ok(())
        }
        (Value::Array(items), Value::Array(da)) => {
            if let Some(first) = da.first() {
                for item in items.iter_mut() {
                    check_value(item, first, path, line_of)?;
                }
            }
            Ok(())
        }
        (v, d) if std::mem::discriminant(v) == std::mem::discriminant(d) => Ok(()),
        (v, _) => Err(mismatch(v)),
    }
}

/// Overlays `user` onto `merged`, recording default-filled leaves.
fn merge(merged: &mut Table, user: &Table, defaults: &Table, prefix: &str, defaulted: &mut Vec<String>) {
    for (k, d) in defaults {
        let path = join(prefix, k);
        match (user.get(k), d) {
            (Some(Value::Table(u)), Value::Table(dt)) => {
                let slot = merged.get_mut(k).and_then(Value::as_table_mut).expect("defaults hold the section");
                merge(slot, u, dt, &path, defaulted);
            }
            (Some(v), _) => {
                merged.insert(k.clone(), v.clone());
            }
            (None, Value::Table(dt)) => {
                let slot = merged.get_mut(k).and_then(Value::as_table_mut).expect("defaults hold the section");
                merge(slot, &Table::new(), dt, &path, defaulted);
            }
            (None, _) => defaulted.push(path),
        }
    }
}

fn string_leaves(table: &Table, prefix: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (k, v) in table {
        match v {
            Value::String(s) => out.push((join(prefix, k), s.clone())),
            Value::Table(t) => out.extend(string_leaves(t, &join(prefix, k))),
            _ => {}
        }
    }
    out
}

/// Line number (1-based) of each `key = value` assignment, by full dotted path.
fn key_lines(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(h) = line.strip_prefix('[') {
            section = h.trim_start_matches('[').trim_end_matches(']').trim().replace(' ', "");
            out.entry(section.clone()).or_insert(i + 1);
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let key: String = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
            out.entry(join(&section, &key)).or_insert(i + 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c.config, ExperimentConfig::default());
        assert_eq!(c.digest.len(), 64);
        assert!(c.defaulted.contains(&"train.gamma".to_string()));
    }

    #[test]
    fn gamma_out_of_range_names_the_bound() {
        let e = parse_config("[train]\ngamma = 1.5\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("γ ∈ [0,1]"), "{msg}");
        assert!(matches!(e, Error::Config { ref key, line: 2, .. } if key == "train.gamma"), "{e:?}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let e = parse_config("train.gamma = 0.9\ntrain.gammma = 0.9\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: 2, .. } if key == "train.gammma"), "{e:?}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        let e = parse_config("[eval]\nepisodes = \"many\"\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: 2, .. } if key == "eval.episodes"), "{e:?}");
    }

    #[test]
    fn unknown_enum_value_names_the_key() {
        let e = parse_config("\n[train]\nvariant = \"dqn\"\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: 3, .. } if key == "train.variant"), "{e:?}");
    }

    #[test]
    fn integers_are_accepted_as_floats() {
        let c = parse_config("train.alpha = 2\n", &[]).unwrap();
        assert_eq!(c.config.train.alpha, 2.0);
    }

    #[test]
    fn syntax_error_reports_line() {
        let e = parse_config("[train]\ngamma = = 1\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn round_trip_is_stable() {
        let c = parse_config("train.variant = \"no_dueling\"\nseeds = [3, 4]\nenv.user.fatigue_weight = 0.2\n", &[]).unwrap();
        let text = to_toml(&c.config).unwrap();
        let again = parse_config(&text, &[]).unwrap();
        assert_eq!(again.config, c.config);
        assert_eq!(again.digest, c.digest);
        assert!(again.defaulted.is_empty());
    }

    #[test]
    fn environment_overrides_apply() {
        let vars = vec![
            ("DEAR_TRAIN__ADAM__LEARNING_RATE".to_string(), "0.002".to_string()),
            ("DEAR_TRAIN__VARIANT".to_string(), "arch_a".to_string()),
            ("DEAR_LOG_SESSIONS".to_string(), "12".to_string()),
        ];
        let c = parse_config("train.adam.learning_rate = 0.5\n", &vars).unwrap();
        assert_eq!(c.config.train.adam.learning_rate, 0.002);
        assert_eq!(c.config.train.variant, crate::qnet::Variant::ArchA);
        assert_eq!(c.config.log_sessions, 12);
        assert_eq!(c.overridden.len(), 3);
    }

    #[test]
    fn digest_tracks_content() {
        let a = parse_config("", &[]).unwrap();
        let b = parse_config("train.seed = 9\n", &[]).unwrap();
        assert_ne!(a.digest, b.digest);
    }

    #[test]
    fn list_length_must_agree() {
        let e = parse_config("env.list_len = 5\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "train.dims.list_len"), "{e:?}");
    }
}
