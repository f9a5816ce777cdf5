//! Checked-inequality lines, CSV formatting and the on-disk run layout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::hex;
use super::run::RunArtifact;
use crate::error::{Error, Result};

/// One checked inequality or tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
    /// Violating index, fitted constants and similar context.
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            measured,
            bound,
            detail: detail.into(),
        }
    }

    /// `measured <= bound`.
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self::new(name, measured <= bound, measured, bound, detail)
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {}: measured={:.6e} bound={:.6e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound
        );
        if !self.detail.is_empty() {
            s.push(' ');
            s.push_str(&self.detail);
        }
        s
    }
}

/// Fixed-format CSV: header row, then `{:.17e}` cells.
pub fn csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub out_dir: PathBuf,
    /// `(file name, sha256)` in write order.
    pub files: Vec<(String, String)>,
}

impl Manifest {
    pub fn checksum(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, h)| h.as_str())
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Writes `summary.txt`, every CSV and grid dump of the run, and
/// `manifest.txt` listing each file with its SHA-256.
pub fn write_reports(artifact: &RunArtifact, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| unwritable(out_dir, e))?;
    let mut files = Vec::new();
    let mut emit = |name: &str, contents: &str| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| unwritable(&path, e))?;
        files.push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    };
    emit("summary.txt", &artifact.summary())?;
    for (name, contents) in &artifact.files {
        emit(name, contents)?;
    }
    let mut manifest = format!("scenario {} {}\n", artifact.scenario_name, artifact.scenario_hash);
    for (name, hash) in &files {
        let _ = writeln!(manifest, "{hash}  {name}");
    }
    fs::write(out_dir.join("manifest.txt"), manifest).map_err(|e| unwritable(out_dir, e))?;
    Ok(Manifest {
        out_dir: out_dir.to_path_buf(),
        files,
    })
}

fn unwritable(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fail_line_carries_values() {
        let c = Check::at_most("gap k=3", 2.5, 1.0, "index=3");
        assert!(!c.pass);
        let line = c.line();
        assert!(line.starts_with("FAIL gap k=3"));
        assert!(line.contains("measured=2.500000e0"));
        assert!(line.contains("index=3"));
    }

    #[test]
    fn csv_is_fixed_format() {
        let s = csv(&["t", "v"], &[vec![1.0, 0.1]]);
        assert_eq!(s, "t,v\n1.00000000000000000e0,1.00000000000000006e-1\n");
    }
}
