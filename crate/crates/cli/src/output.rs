//! CSV formatting, atomic writes and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Formats `x` with 12 significant digits, like C's `%.12g`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A CSV table with a mandatory header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
    /// Run statistics that are not part of the input.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub stats: serde_json::Value,
}

/// Collects the files of one invocation and writes them, plus the manifest,
/// at the end.
pub struct Artifacts {
    dir: PathBuf,
    subcommand: String,
    started: Instant,
    files: Vec<(PathBuf, String)>,
    stats: serde_json::Value,
}

impl Artifacts {
    pub fn new(dir: &Path, subcommand: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            subcommand: subcommand.into(),
            started: Instant::now(),
            files: Vec::new(),
            stats: serde_json::Value::Null,
        }
    }

    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((self.dir.join(name), contents));
    }

    pub fn set_stats(&mut self, stats: serde_json::Value) {
        self.stats = stats;
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        seed: Option<u64>,
    ) -> Result<Vec<PathBuf>, CliError> {
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: self
                .files
                .iter()
                .map(|(p, _)| p.display().to_string())
                .collect(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            stats: self.stats.clone(),
        };
        let mut written = Vec::new();
        for (path, contents) in &self.files {
            write_atomic(path, contents)?;
            written.push(path.clone());
        }
        let path = self.dir.join(format!("{}.manifest.json", self.subcommand));
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        write_atomic(&path, &(json + "\n"))?;
        written.push(path);
        Ok(written)
    }
}
