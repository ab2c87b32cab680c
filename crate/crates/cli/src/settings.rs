//! Flat `key=value` configuration merged with command-line flags.
//!
//! A flag beats the config file, which beats the built-in default. Every
//! value actually used is recorded for the run manifest, and keys the command
//! never asked for are reported as usage errors to catch typos.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    /// Effective value of every setting read so far.
    pub snapshot: BTreeMap<String, String>,
}

pub fn parse_config(text: &str, source: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected `key=value`, got `{line}`", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("{source}:{}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text, &p.display().to_string())?
            }
        };
        Ok(Settings { file, ..Settings::default() })
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.get_opt(key, flag)?.unwrap_or_else(|| {
            self.snapshot.insert(key.to_string(), default.to_string());
            default
        }))
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.consumed.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                None => None,
                Some(raw) => Some(raw.parse().map_err(|e| {
                    CliError::Usage(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
                })?),
            },
        };
        if let Some(v) = &value {
            self.snapshot.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Records a value that did not come through [`Settings::get`].
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.snapshot.insert(key.to_string(), value.to_string());
    }

    /// Fails on config keys the command did not read.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&str> =
            self.file.keys().filter(|k| !self.consumed.contains(*k)).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys for this command: {}", unknown.join(", "))))
        }
    }
}
