//! File formats: self-describing CSV tables, the flat key = value config
//! format, and JSON checkpoints written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Write a CSV table with `#`-prefixed metadata lines, a `# columns:` schema
/// line and the header row. Rows are appended in order; numbers use a fixed
/// scientific format so identical runs produce identical files.
pub fn write_csv<I>(
    path: &Path,
    meta: &[(&str, String)],
    columns: &[String],
    rows: I,
) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# vibret {}", crate::VERSION)?;
    for (k, v) in meta {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "# columns: {}", columns.join(","))?;
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        let mut line = String::with_capacity(row.len() * 20);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v:.12e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV produced by [`write_csv`]: returns the column names and rows,
/// skipping metadata lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if columns.is_empty() {
            columns = line.split(',').map(|s| s.trim().to_string()).collect();
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| CoreError::Config(format!("bad CSV row {line:?}: {e}")))?);
    }
    if columns.is_empty() {
        return Err(CoreError::Config(format!(
            "no header row in {}",
            path.display()
        )));
    }
    Ok((columns, rows))
}

/// Parse a flat `key = value` config file: one pair per line, `#` comments,
/// duplicate keys rejected.
pub fn parse_flat_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CoreError::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(CoreError::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

/// Hex-truncated SHA-256 of a canonical config string.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

/// Serialize JSON to `path` atomically (write to a sibling temp file, then
/// rename).
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, value)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
