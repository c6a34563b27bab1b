//! Optional `key = value` configuration files. Command-line flags override
//! file values, which override built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use hgnn_core::{Error, Result};

/// A parsed `key = value` file. Lines starting with `#` are comments.
#[derive(Debug, Default)]
pub struct KvFile {
    map: BTreeMap<String, String>,
}

impl KvFile {
    pub fn empty() -> KvFile {
        KvFile::default()
    }

    pub fn load(path: &Path) -> Result<KvFile> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}: line {}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(KvFile { map })
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }
}

/// Flag value if given, else the file value, else the default.
pub fn resolve<T: FromStr + Clone>(
    flag: &Option<T>,
    file: &KvFile,
    key: &str,
    default: T,
) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v.clone());
    }
    Ok(file.get::<T>(key)?.unwrap_or(default))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nlambda = 0.75\nbackbone = mixhop_tcn\n").unwrap();
        let file = KvFile::load(&path).unwrap();
        assert_eq!(file.get::<f64>("lambda").unwrap(), Some(0.75));
        assert_eq!(file.get_str("backbone"), Some("mixhop_tcn"));

        // flag wins over file, file wins over default
        assert_eq!(resolve(&Some(0.1), &file, "lambda", 0.5).unwrap(), 0.1);
        assert_eq!(resolve(&None::<f64>, &file, "lambda", 0.5).unwrap(), 0.75);
        assert_eq!(resolve(&None::<f64>, &file, "absent", 0.5).unwrap(), 0.5);
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "lambda 0.75\n").unwrap();
        assert!(KvFile::load(&path).is_err());

        std::fs::write(&path, "lambda = abc\n").unwrap();
        let file = KvFile::load(&path).unwrap();
        assert!(file.get::<f64>("lambda").is_err());
    }
}
