//! Plain-text configuration files: one `key = value` per line, `#`
//! starts a comment (whole-line or trailing), blank lines ignored.
//! Every key must be consumed — leftovers are reported as errors so
//! typos cannot silently fall back to defaults.

use std::cell::RefCell;
use std::collections::HashSet;
use std::path::Path;

use crate::{CliError, CliResult};

pub struct KvFile {
    origin: String,
    entries: Vec<(String, String, usize)>,
    used: RefCell<HashSet<String>>,
}

impl KvFile {
    pub fn parse(path: &Path) -> CliResult<Self> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("cannot read config {origin}: {e}")))?;
        Self::parse_str(&text, &origin)
    }

    pub fn parse_str(text: &str, origin: &str) -> CliResult<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Domain(format!("{origin}:{line_no}: expected `key = value`"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(CliError::Domain(format!(
                    "{origin}:{line_no}: bad key `{key}` (letters, digits, underscores)"
                )));
            }
            if value.is_empty() {
                return Err(CliError::Domain(format!("{origin}:{line_no}: `{key}` has no value")));
            }
            if entries.iter().any(|(k, _, _)| k == key) {
                return Err(CliError::Domain(format!(
                    "{origin}:{line_no}: duplicate key `{key}`"
                )));
            }
            entries.push((key.to_string(), value.to_string(), line_no));
        }
        Ok(Self { origin: origin.to_string(), entries, used: RefCell::new(HashSet::new()) })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        let hit = self.entries.iter().find(|(k, _, _)| k == key);
        if hit.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        hit.map(|(_, v, line)| (v.as_str(), *line))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> CliResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                CliError::Domain(format!(
                    "{}:{line}: `{key}` expects {what}, got `{v}`",
                    self.origin
                ))
            }),
        }
    }

    pub fn u64(&self, key: &str, default: u64) -> CliResult<u64> {
        Ok(self.typed(key, "an unsigned integer")?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str, default: usize) -> CliResult<usize> {
        Ok(self.typed(key, "an unsigned integer")?.unwrap_or(default))
    }

    pub fn maybe_usize(&self, key: &str) -> CliResult<Option<usize>> {
        self.typed(key, "an unsigned integer")
    }

    pub fn f64(&self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.typed(key, "a number")?.unwrap_or(default))
    }

    pub fn bool(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(CliError::Domain(format!(
                "{}:{line}: `{key}` expects true or false, got `{v}`",
                self.origin
            ))),
        }
    }

    /// Comma-separated list of unsigned integers, e.g. `256,128`.
    pub fn usize_list(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|part| {
                    part.trim().parse::<usize>().map_err(|_| {
                        CliError::Domain(format!(
                            "{}:{line}: `{key}` expects comma-separated integers, got `{v}`",
                            self.origin
                        ))
                    })
                })
                .collect(),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).map_or_else(|| default.to_string(), |(v, _)| v.to_string())
    }

    /// Errors on any key that no getter consumed.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _, _)| !used.contains(k))
            .map(|(k, _, line)| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Domain(format!(
                "{}: unknown key(s) {}",
                self.origin,
                unknown.join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> KvFile {
        KvFile::parse_str(text, "test.cfg").unwrap()
    }

    #[test]
    fn reads_typed_values_with_comments() {
        let kv = parse(
            "# a header\nseed = 9\nrate = 2e-4 # trailing note\nflag = true\nname = hello\ndims = 4, 8,16\n",
        );
        assert_eq!(kv.u64("seed", 0).unwrap(), 9);
        assert_eq!(kv.f64("rate", 0.0).unwrap(), 2e-4);
        assert!(kv.bool("flag", false).unwrap());
        assert_eq!(kv.string("name", ""), "hello");
        assert_eq!(kv.usize_list("dims", &[]).unwrap(), vec![4, 8, 16]);
        kv.finish().unwrap();
    }

    #[test]
    fn missing_keys_fall_back_to_defaults() {
        let kv = parse("seed = 1\n");
        assert_eq!(kv.f64("rate", 0.5).unwrap(), 0.5);
        assert_eq!(kv.maybe_usize("absent").unwrap(), None);
        assert_eq!(kv.usize_list("dims", &[7]).unwrap(), vec![7]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvFile::parse_str("just words\n", "t").is_err());
        assert!(KvFile::parse_str("key =\n", "t").is_err());
        assert!(KvFile::parse_str("a = 1\na = 2\n", "t").is_err());
        assert!(KvFile::parse_str("bad key = 1\n", "t").is_err());
    }

    #[test]
    fn type_errors_name_the_line() {
        let kv = parse("seed = soon\n");
        let err = kv.u64("seed", 0).unwrap_err().to_string();
        assert!(err.contains("test.cfg:1"), "{err}");
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn unused_keys_are_reported() {
        let kv = parse("seed = 1\nmystery = 2\n");
        kv.u64("seed", 0).unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("mystery"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }
}
