//! JSONL log record codec.
//!
//! Field names: `url`, `effective_url`, `vantage`, `run`, `class`,
//! `http_status`, `body_sha256`, `body_size`, `blockpage`, `final_url`,
//! `elapsed_ms`, `ts`. Optional fields are omitted when absent.

use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{BlockpageClass, BodyDigest, FetchOutcome, StatusClass, TargetUrl};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("record field {field:?}: {message}")]
    Schema { field: &'static str, message: String },
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: String,
        line: usize,
        #[source]
        source: Box<RecordError>,
    },
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl RecordError {
    /// Name of the offending field, for schema errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            RecordError::Schema { field, .. } => Some(field),
            RecordError::AtLine { source, .. } => source.field(),
            _ => None,
        }
    }
}

#[derive(Serialize)]
struct WireRecord<'a> {
    url: &'a str,
    effective_url: &'a str,
    vantage: &'a str,
    run: u32,
    class: StatusClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    http_status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    body_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    body_size: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blockpage: Option<BlockpageClass>,
    final_url: &'a str,
    elapsed_ms: u64,
    ts: DateTime<Utc>,
}

/// Serializes one outcome as a single JSON line (no trailing newline).
pub fn encode_record(outcome: &FetchOutcome) -> String {
    let wire = WireRecord {
        url: outcome.url.raw(),
        effective_url: outcome.url.effective(),
        vantage: &outcome.vantage_id,
        run: outcome.run_index,
        class: outcome.status_class,
        http_status: outcome.http_status,
        body_sha256: outcome.body_digest.map(|d| d.to_hex()),
        body_size: outcome.body_size,
        blockpage: outcome.blockpage,
        final_url: &outcome.final_url,
        elapsed_ms: outcome.elapsed_ms,
        ts: outcome.timestamp,
    };
    // serde_json escapes control characters, so the line never contains '\n'.
    serde_json::to_string(&wire).expect("record serialization is infallible")
}

fn schema(field: &'static str, message: impl Into<String>) -> RecordError {
    RecordError::Schema {
        field,
        message: message.into(),
    }
}

fn req_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<&'a str, RecordError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(schema(field, "expected a string")),
        None => Err(schema(field, "missing")),
    }
}

fn req_u64(obj: &Map<String, Value>, field: &'static str) -> Result<u64, RecordError> {
    match obj.get(field) {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| schema(field, "expected a non-negative integer")),
        None => Err(schema(field, "missing")),
    }
}

fn opt_u64(obj: &Map<String, Value>, field: &'static str) -> Result<Option<u64>, RecordError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| schema(field, "expected a non-negative integer")),
    }
}

fn opt_str<'a>(obj: &'a Map<String, Value>, field: &'static str) -> Result<Option<&'a str>, RecordError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(schema(field, "expected a string")),
    }
}

/// Parses one JSON line back into an outcome.
pub fn decode_record(line: &str) -> Result<FetchOutcome, RecordError> {
    let value: Value = serde_json::from_str(line).map_err(|e| RecordError::Parse(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(RecordError::Parse("expected a JSON object".into()));
    };

    let raw = req_str(&obj, "url")?;
    let effective = req_str(&obj, "effective_url")?;
    let url = TargetUrl::from_parts(raw, effective).map_err(|e| schema("effective_url", e.to_string()))?;
    let vantage_id = req_str(&obj, "vantage")?.to_string();
    let run_index = u32::try_from(req_u64(&obj, "run")?).map_err(|_| schema("run", "out of range"))?;
    let status_class: StatusClass = req_str(&obj, "class")?
        .parse()
        .map_err(|e: String| schema("class", e))?;
    let http_status = opt_u64(&obj, "http_status")?
        .map(|s| u16::try_from(s).map_err(|_| schema("http_status", "out of range")))
        .transpose()?;
    if status_class.is_http() != http_status.is_some() {
        return Err(schema(
            "http_status",
            format!("presence does not match class {status_class}"),
        ));
    }
    let body_digest = opt_str(&obj, "body_sha256")?
        .map(|s| BodyDigest::from_hex(s).ok_or_else(|| schema("body_sha256", "expected 64 hex digits")))
        .transpose()?;
    let body_size = opt_u64(&obj, "body_size")?;
    let blockpage = opt_str(&obj, "blockpage")?
        .map(|s| s.parse::<BlockpageClass>().map_err(|e| schema("blockpage", e)))
        .transpose()?;
    if blockpage.is_some() && body_size.is_none() {
        return Err(schema("blockpage", "present without a response body"));
    }
    let final_url = req_str(&obj, "final_url")?.to_string();
    let elapsed_ms = req_u64(&obj, "elapsed_ms")?;
    let timestamp = DateTime::parse_from_rfc3339(req_str(&obj, "ts")?)
        .map_err(|e| schema("ts", e.to_string()))?
        .with_timezone(&Utc);

    Ok(FetchOutcome {
        url,
        vantage_id,
        run_index,
        status_class,
        http_status,
        body_digest,
        body_size,
        blockpage,
        final_url,
        elapsed_ms,
        timestamp,
    })
}

/// Decodes every non-blank line of a JSONL log file.
pub fn read_log(path: &Path) -> Result<Vec<FetchOutcome>, RecordError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_record(&line).map_err(|e| RecordError::AtLine {
            path: path.display().to_string(),
            line: idx + 1,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

/// Reads a log file or every `*.jsonl` file in a directory (sorted by name).
pub fn read_logs(path: &Path) -> Result<Vec<FetchOutcome>, RecordError> {
    if !path.is_dir() {
        return read_log(path);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_log(&f)?);
    }
    Ok(out)
}
