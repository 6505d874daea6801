//! Flat key=value config files and flag/config/default resolution.
//!
//! Precedence is command line > config file > built-in default, and every
//! effective value is echoed into the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use privrep_core::error::{Error, Result};

/// Parse a flat key=value file. Blank lines and `#` comments are allowed;
/// nested keys (sections, dotted names) are rejected.
pub fn parse_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let content = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            return Err(Error::schema(
                i + 1,
                "sections are not supported; the config is flat key=value",
            ));
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::schema(i + 1, format!("expected key=value, got {raw:?}")))?;
        let key = key.trim();
        if key.is_empty() || key.contains('.') || key.contains(' ') {
            return Err(Error::schema(
                i + 1,
                format!("bad key {key:?}: nested or empty keys are rejected"),
            ));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Resolves one command's effective settings, recording them for the
/// manifest.
pub struct Resolver {
    cfg: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(cfg: BTreeMap<String, String>) -> Resolver {
        Resolver {
            cfg,
            echo: BTreeMap::new(),
        }
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::Parameter(format!("cannot parse {key}={raw:?}"))
        })
    }

    /// Flag > config > default.
    pub fn value<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.cfg.get(key).cloned() {
                Some(raw) => self.parse(key, &raw)?,
                None => default,
            },
        };
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Flag > config; absent stays absent.
    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.cfg.get(key).cloned() {
                Some(raw) => Some(self.parse(key, &raw)?),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Boolean switch: set on the command line, or truthy in the config.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = if flag {
            true
        } else {
            match self.cfg.get(key).map(|s| s.as_str()) {
                Some("true") | Some("1") | Some("yes") => true,
                Some("false") | Some("0") | Some("no") | None => false,
                Some(other) => {
                    return Err(Error::Parameter(format!(
                        "cannot parse {key}={other:?} as a boolean"
                    )))
                }
            }
        };
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Record a fixed setting so the manifest stays complete.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    pub fn into_echo(self) -> BTreeMap<String, String> {
        self.echo
    }
}
