//! CSV and JSON artifact writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Destination directory for a run's artifacts, or nowhere (sweeps).
#[derive(Debug, Clone)]
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Sink { dir: Some(dir.to_path_buf()) })
    }

    pub fn none() -> Self {
        Sink { dir: None }
    }

    pub fn is_active(&self) -> bool {
        self.dir.is_some()
    }

    /// Writes `rows` with a header row. Returns the file name, or `None` for a null sink.
    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<Option<String>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(Some(name.to_string()))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<Option<String>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(name.to_string()))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<Option<String>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(Some(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        n: i64,
        re: f64,
    }

    #[test]
    fn csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let sink = Sink::dir(dir.path()).unwrap();
        sink.csv("a.csv", &[Row { n: -1, re: 0.5 }, Row { n: 2, re: -1e-20 }]).unwrap();
        let text = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text.lines().next(), Some("n,re"));
        assert_eq!(text.lines().count(), 3);
        assert_eq!(Sink::none().csv("a.csv", &[Row { n: 1, re: 0.0 }]).unwrap(), None);
    }
}
