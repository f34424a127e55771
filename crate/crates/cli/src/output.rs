//! CSV tables and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Header plus rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        self.rows.extend(other.rows);
    }

    /// UTF-8 CSV with LF line endings.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
        }
        fs::write(path, self.to_csv()?).with_context(|| format!("writing {}", path.display()))
    }
}

/// Shortest round-trip form, with an exponent for very small or large values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Version string in `git describe` style.
pub fn version() -> String {
    match option_env!("PASSKIT_GIT_DESCRIBE") {
        Some(v) if !v.is_empty() => v.to_string(),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub scenario: String,
    pub activation: Option<String>,
    pub sweep: Option<Sweep>,
    pub params: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub axis: String,
    pub values: Vec<f64>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_lf_and_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push([num(1.5), num(0.1 + 0.2)]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "a,b\n1.5,0.30000000000000004\n");
        assert_eq!(num(1.5e-7), "1.5e-7");
    }
}
