//! Flat `key = value` configuration files. `#` starts a comment; every key
//! must be consumed by the reader, so a misspelt key is an error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fails on any key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{k}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let mut kv = KeyValues::parse("# comment\nseed = 7\n\nlr=0.001 # trailing\n").unwrap();
        assert_eq!(kv.take::<u64>("seed").unwrap(), Some(7));
        assert_eq!(kv.take_or::<f64>("lr", 1.0).unwrap(), 0.001);
        assert_eq!(kv.take_or::<usize>("epochs", 3).unwrap(), 3);
        kv.finish().unwrap();

        let mut kv = KeyValues::parse("seed = 1\nsede = 2").unwrap();
        kv.take::<u64>("seed").unwrap();
        assert!(matches!(kv.finish(), Err(Error::Config(m)) if m.contains("sede")));
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(KeyValues::parse("a = 1\nnonsense"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        let mut kv = KeyValues::parse("n = many").unwrap();
        assert!(matches!(kv.take::<usize>("n"), Err(Error::Config(_))));
    }
}
