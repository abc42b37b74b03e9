//! Result files: CSV with a header row, preceded by `#` comment lines that echo
//! the library version, the seed(s) and the full effective configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
    /// Seconds spent on the run that produced the row.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Comment block written at the top of every file.
pub fn preamble(seeds: &[u64], config_toml: &str) -> Vec<String> {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut lines = vec![format!("owa-pto {VERSION}"), format!("seed {}", seeds.join(","))];
    lines.extend(config_toml.lines().map(|l| format!("config {l}")));
    lines
}

/// Writes `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| format!(".{}.tmp", n.to_string_lossy()))
        .unwrap_or_else(|| ".tmp".into());
    tmp.set_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Serializes `rows` as CSV below the comment lines.
pub fn render_csv<T: Serialize>(comments: &[String], rows: &[T]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    let mut wtr = csv::Writer::from_writer(buf);
    for r in rows {
        wtr.serialize(r).map_err(|e| CliError::Config(e.to_string()))?;
    }
    wtr.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, comments: &[String], rows: &[T]) -> CliResult<()> {
    write_atomic(path, &render_csv(comments, rows)?)
}

/// Reads rows back, skipping the comment block.
pub fn read_rows(path: &Path) -> CliResult<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
        .collect()
}
