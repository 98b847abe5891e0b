//! Flat `key = value` run files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are lower-case ASCII letters, digits, `_` or `-`; `-` is folded to
//! `_` so `max-iter` and `max_iter` name the same setting. A key may appear
//! once.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("config line {line}: {kind}")]
pub struct ConfigError {
    pub line: usize,
    pub kind: ConfigErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigErrorKind {
    #[error("expected `key = value`")]
    MissingEquals,
    #[error("empty key")]
    EmptyKey,
    #[error("invalid key `{0}`")]
    BadKey(String),
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("empty value for `{0}`")]
    EmptyValue(String),
}

pub fn normalize_key(key: &str) -> String {
    key.replace('-', "_")
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |kind| ConfigError { line, kind };
        let (key, value) = body.split_once('=').ok_or_else(|| err(ConfigErrorKind::MissingEquals))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(err(ConfigErrorKind::EmptyKey));
        }
        if !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-') {
            return Err(err(ConfigErrorKind::BadKey(key.to_string())));
        }
        let key = normalize_key(key);
        if value.is_empty() {
            return Err(err(ConfigErrorKind::EmptyValue(key)));
        }
        if out.insert(key.clone(), value.to_string()).is_some() {
            return Err(err(ConfigErrorKind::Duplicate(key)));
        }
    }
    Ok(out)
}

/// Settings from a run file, consulted when a flag is absent.
#[derive(Clone, Debug, Default)]
pub struct Layered {
    file: BTreeMap<String, String>,
}

impl Layered {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Layered { file }
    }

    /// Rejects any file key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), String> {
        match self.file.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(format!("unknown config key `{k}`")),
            None => Ok(()),
        }
    }

    /// Flag value if given, else the file value, else `None`.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, String>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v.parse::<T>().map(Some).map_err(|e| format!("config key `{key}`: {e}")),
            None => Ok(None),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    /// Parses with a custom function rather than `FromStr`.
    pub fn get_with<T, E: std::fmt::Display>(
        &self,
        key: &str,
        flag: Option<&str>,
        parse: impl Fn(&str) -> Result<T, E>,
    ) -> Result<Option<T>, String> {
        match flag.or(self.file.get(key).map(String::as_str)) {
            Some(v) => parse(v).map(Some).map_err(|e| format!("`{key}`: {e}")),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_and_comments() {
        let m = parse_config("# run\n grid = 128 \nmax-iter=50 # cap\n\nspin = 0.5,0\n").unwrap();
        assert_eq!(m["grid"], "128");
        assert_eq!(m["max_iter"], "50");
        assert_eq!(m["spin"], "0.5,0");
    }

    #[test]
    fn rejects_malformed_lines() {
        let cases = [
            ("grid", ConfigErrorKind::MissingEquals),
            ("= 3", ConfigErrorKind::EmptyKey),
            ("Grid = 3", ConfigErrorKind::BadKey("Grid".into())),
            ("grid =", ConfigErrorKind::EmptyValue("grid".into())),
            ("grid = 1\ngrid = 2", ConfigErrorKind::Duplicate("grid".into())),
            ("max_iter = 1\nmax-iter = 2", ConfigErrorKind::Duplicate("max_iter".into())),
        ];
        for (text, kind) in cases {
            assert_eq!(parse_config(text).unwrap_err().kind, kind, "{text:?}");
        }
        assert_eq!(parse_config("a = 1\nb").unwrap_err().line, 2);
    }

    #[test]
    fn flags_override_file() {
        let l = Layered::new(parse_config("grid = 128\ntol = 1e-6").unwrap());
        assert_eq!(l.get_or("grid", Some(64usize), 32).unwrap(), 64);
        assert_eq!(l.get_or("grid", None::<usize>, 32).unwrap(), 128);
        assert_eq!(l.get_or("samples", None::<usize>, 7).unwrap(), 7);
        assert!(l.get::<usize>("tol", None).is_err());
        assert!(l.check_keys(&["grid"]).is_err());
        assert!(l.check_keys(&["grid", "tol"]).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,200}") {
            let _ = parse_config(&s);
        }

        #[test]
        fn round_trips_simple_maps(m in proptest::collection::btree_map("[a-z][a-z0-9_]{0,8}", "[A-Za-z0-9.,:]{1,12}", 0..8)) {
            let text: String = m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
            proptest::prop_assert_eq!(parse_config(&text).unwrap(), m);
        }
    }
}
