use std::io::{BufRead, BufReader, Read};

use serde_json::Value;

use super::{ActionLog, Timestamp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" | "ndjson" => Ok(LogFormat::Jsonl),
            other => Err(Error::config(format!("unknown log format `{other}`"))),
        }
    }
}

const HEADER: [&str; 3] = ["user_id", "message_id", "timestamp"];

/// Parses an integer epoch-seconds value or an RFC 3339 date-time.
pub fn parse_time(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(t) = raw.parse::<i64>() {
        return Some(t);
    }
    chrono::DateTime::parse_from_rfc3339(raw).ok().map(|dt| dt.timestamp())
}

/// Reads an action log from CSV or JSON Lines.
///
/// The CSV header row is optional; when present it must be
/// `user_id,message_id,timestamp`. Error line numbers are physical lines of
/// the input.
pub fn parse_action_log<R: Read>(source: R, format: LogFormat, dedup: bool) -> Result<ActionLog> {
    let rows = match format {
        LogFormat::Csv => read_csv(source)?,
        LogFormat::Jsonl => read_jsonl(source)?,
    };
    if rows.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(ActionLog::intern(rows, dedup))
}

fn check_time(line: usize, raw: &str) -> Result<Timestamp> {
    let t = parse_time(raw).ok_or_else(|| Error::Parse {
        line,
        message: format!("bad timestamp `{raw}`"),
    })?;
    if t < 0 {
        return Err(Error::Validation {
            line,
            message: format!("negative timestamp {t}"),
        });
    }
    Ok(t)
}

fn read_csv<R: Read>(source: R) -> Result<Vec<(String, String, Timestamp)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        if std::mem::take(&mut first) && record.iter().eq(HEADER.iter().copied()) {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty user or message id".into(),
            });
        }
        let t = check_time(line, &record[2])?;
        rows.push((record[0].to_string(), record[1].to_string(), t));
    }
    Ok(rows)
}

fn id_field(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(Error::Parse {
            line,
            message: format!("missing or invalid `{key}`"),
        }),
    }
}

fn read_jsonl<R: Read>(source: R) -> Result<Vec<(String, String, Timestamp)>> {
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        let user = id_field(obj, "user_id", line_no)?;
        let message = id_field(obj, "message_id", line_no)?;
        let raw_time = match obj.get("timestamp") {
            Some(Value::Number(n)) => n.to_string(),
            Some(Value::String(s)) => s.clone(),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing or invalid `timestamp`".into(),
                })
            }
        };
        let t = check_time(line_no, &raw_time)?;
        rows.push((user, message, t));
    }
    Ok(rows)
}
