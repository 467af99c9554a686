//! Shared helpers for the versioned on-disk formats.
//!
//! Every structured-text file carries a leading `schema` tag of the form
//! `muralbot.<kind>/<version>`; CSV files carry it as a `# schema` comment
//! on the first line.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: expected schema `{expected}`, found `{found}`")]
    Schema { path: String, expected: String, found: String },
}

impl FormatError {
    pub fn parse(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Self::Parse { path: path.as_ref().display().to_string(), message: message.to_string() }
    }
}

pub fn read_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn check_schema(path: &Path, found: &str, expected: &str) -> Result<(), FormatError> {
    if found == expected {
        Ok(())
    } else {
        Err(FormatError::Schema {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = read_string(path)?;
    toml::from_str(&text).map_err(|e| FormatError::parse(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = toml::to_string_pretty(value).map_err(|e| FormatError::parse(path, e))?;
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FormatError::parse(path, e))?;
    write_bytes(path, text.as_bytes())
}

/// Splits a CSV file into its schema tag and data rows (header row removed).
pub fn read_csv_rows(path: &Path, expected_schema: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let text = read_string(path)?;
    parse_csv_rows(path, &text, expected_schema)
}

pub fn parse_csv_rows(path: &Path, text: &str, expected_schema: &str) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut lines = text.lines();
    let tag = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema "))
        .ok_or_else(|| FormatError::parse(path, "missing `# schema` line"))?;
    check_schema(path, tag.trim(), expected_schema)?;
    lines.next().ok_or_else(|| FormatError::parse(path, "missing header row"))?;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::parse(path, format!("row {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Formats a float so that it parses back to the identical value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
