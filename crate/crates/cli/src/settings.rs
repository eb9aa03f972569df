//! Merges the flat `key = value` config file with command-line flags.
//!
//! Keys are the flag names with `-` replaced by `_`; flags win over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use gpf_core::trainer::TrainConfig;

use crate::error::CliError;

/// Training keys shared by `train`, `compare`, and `bench-time`.
pub const TRAIN_KEYS: &[&str] = &[
    "variant",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "gamma",
    "rff_dim",
    "alpha",
    "precision_mode",
    "sn_c",
    "dropout_rate",
    "hidden_dim",
    "depth",
    "mc_passes",
    "ensemble_size",
    "ensemble_mode",
    "seeds",
];

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn from_file(path: Option<&Path>) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let Some(path) = path else {
            return Ok(Self { values });
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key = value, got {line:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            values.insert(normalize(k), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set_flag(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(normalize(key), v);
        }
    }

    pub fn set_flag_display<T: ToString>(&mut self, key: &str, value: Option<T>) {
        self.set_flag(key, value.map(|v| v.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Rejects keys that the command does not understand.
    pub fn check_keys(&self, command: &str, allowed: &[&str]) -> Result<(), CliError> {
        for k in self.values.keys() {
            if !allowed.contains(&k.as_str()) && !TRAIN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown setting {k:?} for {command}"
                )));
            }
        }
        Ok(())
    }

    pub fn reject_train_keys(&self, command: &str) -> Result<(), CliError> {
        match TRAIN_KEYS.iter().find(|k| self.contains(k)) {
            Some(k) => Err(CliError::Usage(format!(
                "{command} does not take training setting {k:?}"
            ))),
            None => Ok(()),
        }
    }

    /// Applies every training key on top of `base`.
    pub fn train_config(&self, base: TrainConfig) -> Result<TrainConfig, CliError> {
        let mut cfg = base;
        for &k in TRAIN_KEYS {
            if let Some(v) = self.raw(k) {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Usage(format!("bad entry {s:?} in {key}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_text(text: &str) -> Result<Settings, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, text).unwrap();
        Settings::from_file(Some(&path))
    }

    #[test]
    fn file_then_flags() {
        let mut s = from_text("epochs = 3  # short run\n\nlearning-rate=0.01\n").unwrap();
        assert_eq!(s.raw("learning_rate"), Some("0.01"));
        s.set_flag("epochs", Some("5".into()));
        s.set_flag("gamma", None);
        let cfg = s.train_config(TrainConfig::default()).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.gamma, TrainConfig::default().gamma);
    }

    #[test]
    fn malformed_lines_and_values_are_usage_errors() {
        assert!(matches!(from_text("epochs 3\n"), Err(CliError::Usage(_))));
        let s = from_text("bins = many\n").unwrap();
        assert!(matches!(s.get::<usize>("bins"), Err(CliError::Usage(_))));
        assert!(s.check_keys("evaluate", &["bins"]).is_ok());
        assert!(s.check_keys("generate", &["groups"]).is_err());
    }

    #[test]
    fn train_keys_rejected_where_meaningless() {
        let mut s = Settings::default();
        s.set_flag("gamma", Some("1".into()));
        assert!(s.reject_train_keys("generate").is_err());
        assert!(s.check_keys("train", &[]).is_ok());
    }

    #[test]
    fn lists() {
        assert_eq!(
            parse_list::<u64>("seeds", "0, 1,2,").unwrap(),
            vec![0, 1, 2]
        );
        assert!(parse_list::<u64>("seeds", "0,x").is_err());
    }
}
