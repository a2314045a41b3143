//! Reading forum exports into [`MarkedEvent`] lists.
//!
//! Two formats are accepted:
//!
//! * JSON lines, one object per line: `{"id": "...", "parent": "..." | null, "ts": 1556000000}`.
//!   A serialized [`EventSpace`](crate::event::EventSpace) additionally starts
//!   with a `{"offset": .., "horizon": ..}` header line.
//! * CSV with the fixed column order `id,parent,ts`; an empty parent cell marks
//!   a main thread. A leading `id,parent,ts` header row is skipped.
//!
//! Malformed rows are collected with their line numbers. In strict mode the
//! first malformed row aborts the run.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::event::{EventSpace, MarkedEvent, SpaceHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" | "ndjson" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::validation(format!("unknown input format {other:?}"))),
        }
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub events: Vec<MarkedEvent>,
    pub header: Option<SpaceHeader>,
    pub errors: Vec<RowError>,
}

pub fn ingest(path: impl AsRef<Path>, format: InputFormat, strict: bool) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    match format {
        InputFormat::Jsonl => parse_jsonl(reader, strict),
        InputFormat::Csv => parse_csv(reader, strict),
    }
}

/// Loads a strict JSONL file (plain events or serialized space) as a space.
pub fn load_space(path: impl AsRef<Path>) -> Result<EventSpace> {
    let parsed = ingest(path, InputFormat::Jsonl, true)?;
    EventSpace::from_ingested(parsed)
}

fn reject(strict: bool, errors: &mut Vec<RowError>, line: usize, message: String) -> Result<()> {
    if strict {
        return Err(Error::validation(format!("line {line}: {message}")));
    }
    errors.push(RowError { line, message });
    Ok(())
}

pub fn parse_jsonl<R: BufRead>(reader: R, strict: bool) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen_row = false;
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(trimmed) {
            Ok(v) => v,
            Err(e) => {
                reject(strict, &mut out.errors, line_no, format!("invalid JSON: {e}"))?;
                seen_row = true;
                continue;
            }
        };
        if !seen_row && value.get("id").is_none() && value.get("offset").is_some() {
            match serde_json::from_value::<SpaceHeader>(value) {
                Ok(h) if h.offset.is_finite() && h.horizon.is_finite() => out.header = Some(h),
                _ => reject(strict, &mut out.errors, line_no, "malformed header".into())?,
            }
            seen_row = true;
            continue;
        }
        seen_row = true;
        match event_from_json(&value) {
            Ok(ev) => out.events.push(ev),
            Err(msg) => reject(strict, &mut out.errors, line_no, msg)?,
        }
    }
    Ok(out)
}

fn event_from_json(v: &Value) -> std::result::Result<MarkedEvent, String> {
    let obj = v.as_object().ok_or("row is not a JSON object")?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing or empty `id`".into()),
    };
    let parent = match obj.get("parent") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(other) => return Err(format!("`parent` must be a string or null, got {other}")),
    };
    let time = match obj.get("ts") {
        Some(Value::Number(n)) => n.as_f64().ok_or("`ts` out of range")?,
        Some(other) => return Err(format!("`ts` must be a number, got {other}")),
        None => return Err("missing `ts`".into()),
    };
    if !time.is_finite() {
        return Err("`ts` is not finite".into());
    }
    Ok(MarkedEvent { id, parent, time })
}

pub fn parse_csv<R: Read>(reader: R, strict: bool) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Ingested::default();
    for (k, rec) in rdr.records().enumerate() {
        let line_no = rec
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line() as usize))
            .unwrap_or(k + 1);
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                reject(strict, &mut out.errors, line_no, format!("unreadable row: {e}"))?;
                continue;
            }
        };
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && rec.get(0) == Some("id") && rec.get(2) == Some("ts") {
            continue;
        }
        if rec.len() != 3 {
            reject(
                strict,
                &mut out.errors,
                line_no,
                format!("expected 3 columns (id,parent,ts), got {}", rec.len()),
            )?;
            continue;
        }
        let id = &rec[0];
        if id.is_empty() {
            reject(strict, &mut out.errors, line_no, "empty id".into())?;
            continue;
        }
        let time = match rec[2].parse::<f64>() {
            Ok(t) if t.is_finite() => t,
            _ => {
                reject(
                    strict,
                    &mut out.errors,
                    line_no,
                    format!("non-numeric ts {:?}", &rec[2]),
                )?;
                continue;
            }
        };
        let parent = (!rec[1].is_empty()).then(|| rec[1].to_string());
        out.events.push(MarkedEvent {
            id: id.to_string(),
            parent,
            time,
        });
    }
    Ok(out)
}

/// Writes events as canonical JSON lines.
pub fn write_events_jsonl<W: Write>(events: &[MarkedEvent], mut w: W) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut w, ev)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Keeps the listed threads and their replies.
pub fn topic_filter(events: &[MarkedEvent], thread_ids: &HashSet<String>) -> Vec<MarkedEvent> {
    events
        .iter()
        .filter(|ev| match &ev.parent {
            None => thread_ids.contains(&ev.id),
            Some(p) => thread_ids.contains(p),
        })
        .cloned()
        .collect()
}
