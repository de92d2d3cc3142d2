//! Flat `key = value` settings: a config file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key accepted in a config file. Each has a `--flag` spelled with
/// dashes instead of underscores.
pub const KEYS: &[&str] = &[
    "hidden",
    "layers",
    "basic_unit",
    "with_diag",
    "batch",
    "epochs",
    "downsample",
    "seed",
    "threads",
    "path",
    "data_dir",
    "out",
    "n",
    "iters",
    "warmup",
    "instances",
    "targets",
    "tol",
    "tape_tol",
    "train_limit",
    "test_limit",
    "evaluate_test",
    "wall_clock",
    "lr_in",
    "lr_out",
    "lr_hidden",
    "lr_act",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse_text(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{}: expected 'key = value'", i + 1))
            })?;
            let key = normalize(k.trim());
            check_key(&key)?;
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let key = normalize(key);
        check_key(&key)?;
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => finemesh::textio::parse_bool(v).ok_or_else(|| {
                CliError::usage(format!("{key}: expected true or false, got '{v}'"))
            }),
        }
    }

    /// Comma-separated list, e.g. `layers = 4,8,12`.
    pub fn get_list<T>(&self, key: &str, default: &[T]) -> Result<Vec<T>, CliError>
    where
        T: FromStr + Clone,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|item| parse_value(key, item.trim()))
                .collect(),
        }
    }
}

fn normalize(key: &str) -> String {
    key.trim_start_matches("--").replace('-', "_")
}

fn check_key(key: &str) -> Result<(), CliError> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(CliError::usage(format!("unknown setting '{key}'")))
    }
}

fn parse_value<T>(key: &str, v: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    v.parse()
        .map_err(|e| CliError::usage(format!("{key}: cannot parse '{v}': {e}")))
}
