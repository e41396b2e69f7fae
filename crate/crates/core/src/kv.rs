//! `key = value` configuration files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            msg: format!("cannot read: {e}"),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigFile {
                    path: path.to_path_buf(),
                    msg: format!("line {}: expected `key = value`", lineno + 1),
                });
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), (lineno + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::ConfigFile {
                    path: path.to_path_buf(),
                    msg: format!("line {}: duplicate key `{key}`", lineno + 1),
                });
            }
        }
        Ok(KvFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn err(&self, msg: String) -> Error {
        Error::ConfigFile {
            path: self.path.clone(),
            msg,
        }
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.err(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub fn take_list<V: FromStr>(&mut self, key: &str) -> Result<Option<Vec<V>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| self.err(format!("line {line}: bad list item `{item}` for `{key}`")))
                })
                .collect::<Result<Vec<V>>>()
                .map(Some),
        }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.iter().next() {
            return Err(self.err(format!("line {line}: unknown key `{key}`")));
        }
        Ok(())
    }
}

/// Parses `true/false/1/0/yes/no/on/off`.
pub fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_unknown_keys() {
        let mut kv = KvFile::parse("# header\nepochs = 3 # trailing\n\nrate=0.5\nbogus = 1\n", Path::new("x.cfg")).unwrap();
        assert_eq!(kv.take::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(kv.take::<f64>("rate").unwrap(), Some(0.5));
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn lists_and_bad_values() {
        let mut kv = KvFile::parse("grid = -5, 0,5\nn = x\n", Path::new("c")).unwrap();
        assert_eq!(kv.take_list::<f64>("grid").unwrap(), Some(vec![-5.0, 0.0, 5.0]));
        assert!(kv.take::<usize>("n").is_err());
    }

    #[test]
    fn missing_separator_is_rejected() {
        assert!(KvFile::parse("just words\n", Path::new("c")).is_err());
    }
}
