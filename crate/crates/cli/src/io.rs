use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::usage;

pub const HEADER_FIELD: &str = "_header";

/// Provenance record written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: serde_json::Value,
    /// Input file name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

impl Header {
    pub fn new(command: &str, params: serde_json::Value, deterministic: bool) -> Self {
        let created_unix = (!deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Self {
            tool: "factmark".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params,
            inputs: BTreeMap::new(),
            created_unix,
        }
    }

    /// Records the hash of an input file under its file name.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.insert(name, file_sha256(path)?);
        Ok(self)
    }

    pub fn inputs<'a>(self, paths: impl IntoIterator<Item = &'a Path>) -> Result<Self> {
        paths.into_iter().try_fold(self, |h, p| h.input(p))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| usage!("cannot read {}: {e}", path.display()))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage!("cannot open {}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| usage!("cannot read {}: {e}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Header line followed by one JSON object per item.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &Header, items: &[T]) -> Result<()> {
    let mut out = create(path)?;
    let mut head = serde_json::Map::new();
    head.insert(HEADER_FIELD.into(), serde_json::to_value(header)?);
    writeln!(out, "{}", serde_json::Value::Object(head))?;
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON document with the header embedded under `header`.
pub fn write_json_report<T: Serialize>(path: &Path, header: &Header, body: &T) -> Result<()> {
    let mut value = serde_json::to_value(body)?;
    if let serde_json::Value::Object(map) = &mut value {
        map.insert("header".into(), serde_json::to_value(header)?);
    }
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// JSONL items, skipping blank lines, `#` comments and header records.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| usage!("{}:{}: invalid JSON: {e}", path.display(), n + 1))?;
        if value.get(HEADER_FIELD).is_some() {
            continue;
        }
        out.push(
            serde_json::from_value(value)
                .map_err(|e| usage!("{}:{}: unexpected record: {e}", path.display(), n + 1))?,
        );
    }
    Ok(out)
}

/// The header record of a JSONL file, if it has one.
pub fn read_header(path: &Path) -> Result<Option<Header>> {
    let mut first = String::new();
    open(path)?.read_line(&mut first)?;
    let value: serde_json::Value = match serde_json::from_str(first.trim()) {
        Ok(v) => v,
        Err(_) => return Ok(None),
    };
    Ok(value
        .get(HEADER_FIELD)
        .and_then(|h| serde_json::from_value(h.clone()).ok()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_skipped_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let h = Header::new("test", serde_json::json!({"a": 1}), true);
        write_jsonl(&path, &h, &[1u32, 2, 3]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        assert_eq!(read_header(&path).unwrap(), Some(h));
    }

    #[test]
    fn deterministic_header_has_no_timestamp() {
        let h = Header::new("c", serde_json::Value::Null, true);
        assert!(!serde_json::to_string(&h).unwrap().contains("created"));
        assert!(Header::new("c", serde_json::Value::Null, false).created_unix.is_some());
    }
}
