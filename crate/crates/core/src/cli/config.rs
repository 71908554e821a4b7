//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("config key '{key}': cannot parse '{value}'")]
    BadValue { key: String, value: String },
    #[error("missing required config key '{0}'")]
    Missing(String),
    #[error("override '{0}' needs a value")]
    DanglingOverride(String),
    #[error("cannot read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Settings for one subcommand. Every accepted key has an entry in the
/// defaults table, possibly empty (meaning "not set").
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Self {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.merge_text(&text)
    }

    /// Applies `--key value` (or `--key=value`) pairs.
    pub fn merge_overrides(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(key) = arg.strip_prefix("--") else {
                return Err(ConfigError::Syntax { line: 0, text: arg.clone() });
            };
            if let Some((k, v)) = key.split_once('=') {
                self.set(&k.replace('-', "_"), v)?;
            } else {
                let v = it.next().ok_or_else(|| ConfigError::DanglingOverride(key.to_string()))?;
                self.set(&key.replace('-', "_"), v)?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.str(key)?;
        v.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.str(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::with_defaults(&[("n_particles", "100"), ("variant", "prior"), ("data", "")])
    }

    #[test]
    fn file_then_overrides() {
        let mut c = cfg();
        c.merge_text("# comment\nn_particles = 50\n\nvariant = rnn-md-f # trailing\n").unwrap();
        c.merge_overrides(&["--n-particles".into(), "7".into(), "--data=x.csv".into()]).unwrap();
        assert_eq!(c.get::<usize>("n_particles").unwrap(), 7);
        assert_eq!(c.str("variant").unwrap(), "rnn-md-f");
        assert_eq!(c.raw("data"), Some("x.csv"));
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = cfg();
        let e = c.merge_text("particles = 3").unwrap_err();
        assert!(e.to_string().contains("'particles'"));
        let e = c.merge_text("n_particles 3").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        c.set("n_particles", "many").unwrap();
        assert!(c.get::<usize>("n_particles").unwrap_err().to_string().contains("n_particles"));
        assert!(matches!(c.str("data"), Err(ConfigError::Missing(_))));
        assert!(c.merge_overrides(&["--variant".into()]).is_err());
    }
}
