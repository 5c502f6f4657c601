//! Exchange traces, failure minimization, symbolic recreate scripts and
//! their replay.

mod estimate;
mod minimize;
mod replay;
mod script;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::checker::Finding;
use crate::driver::{HttpExchangeResult, TransportError};
use crate::generator::RequestPlan;
use crate::state::Mode;

pub use estimate::estimate_run_length;
pub use minimize::{minimize, MinimizeError, MinimizeOptions, Minimized, Oracle, ReplayOracle};
pub use replay::{replay, replay_attempts, ReplayError, ReplayOptions, ReplayOutcome, ReplayReport};
pub use script::{
    bind_symbols, Consumer, ExpectedFailure, Producer, RecreateScript, ScriptError, ScriptStep,
    SymbolicBinding, SCRIPT_VERSION,
};

pub const TRACE_VERSION: u32 = 1;

/// The response half of an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    /// UTF-8 text, or base64 when `body_base64` is set.
    #[serde(default)]
    pub body: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub body_base64: bool,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport_error: Option<TransportError>,
}

impl ResponseRecord {
    pub fn from_result(result: &HttpExchangeResult) -> ResponseRecord {
        let (body, body_base64) = match std::str::from_utf8(&result.body) {
            Ok(text) => (text.to_string(), false),
            Err(_) => (base64::engine::general_purpose::STANDARD.encode(&result.body), true),
        };
        ResponseRecord {
            status: result.status,
            headers: result.headers.clone(),
            body,
            body_base64,
            latency_ms: result.latency.as_secs_f64() * 1000.0,
            transport_error: result.transport_error.clone(),
        }
    }

    pub fn body_bytes(&self) -> Vec<u8> {
        if self.body_base64 {
            base64::engine::general_purpose::STANDARD
                .decode(&self.body)
                .unwrap_or_default()
        } else {
            self.body.as_bytes().to_vec()
        }
    }

    /// Rebuilds the exchange result.
    pub fn to_result(&self) -> HttpExchangeResult {
        let latency = Duration::from_secs_f64(self.latency_ms.max(0.0) / 1000.0);
        match (&self.status, &self.transport_error) {
            (Some(status), _) => HttpExchangeResult::received(*status, self.headers.clone(), self.body_bytes(), latency),
            (None, Some(e)) => HttpExchangeResult::failed(e.clone(), latency),
            (None, None) => HttpExchangeResult::failed(TransportError::ProtocolError("no status".into()), latency),
        }
    }

    /// Parsed JSON body, if any.
    pub fn json(&self) -> Option<serde_json::Value> {
        serde_json::from_slice(&self.body_bytes()).ok()
    }
}

/// One completed exchange. Events are numbered in completion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub event_id: u64,
    pub plan: RequestPlan,
    pub response: ResponseRecord,
    #[serde(default)]
    pub findings: Vec<Finding>,
    pub dispatch_epoch: u64,
    pub completion_epoch: u64,
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub trace_version: u32,
    pub mode: Mode,
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl TraceHeader {
    pub fn new(mode: Mode, max_in_flight: usize) -> TraceHeader {
        TraceHeader {
            trace_version: TRACE_VERSION,
            mode,
            max_in_flight,
            seed: None,
            endpoint: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SinkError {
    #[error("trace write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Where events go, in completion order.
pub trait TraceSink {
    fn record(&mut self, event: &TraceEvent) -> Result<(), SinkError>;

    fn finish(&mut self) -> Result<(), SinkError> {
        Ok(())
    }

    /// Identifies the persisted trace.
    fn reference(&self) -> String;
}

/// JSON Lines file: a header line, then one event per line, flushed as
/// each event is recorded.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path, header: &TraceHeader) -> Result<JsonlSink, SinkError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            out,
        })
    }
}

impl TraceSink for JsonlSink {
    fn record(&mut self, event: &TraceEvent) -> Result<(), SinkError> {
        serde_json::to_writer(&mut self.out, event)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), SinkError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }

    fn reference(&self) -> String {
        self.path.display().to_string()
    }
}

/// Keeps every event in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<TraceEvent>,
}

impl TraceSink for MemorySink {
    fn record(&mut self, event: &TraceEvent) -> Result<(), SinkError> {
        self.events.push(event.clone());
        Ok(())
    }

    fn reference(&self) -> String {
        format!("memory:{}", self.events.len())
    }
}

/// Counts events and keeps nothing, for long runs where only the result
/// matters.
#[derive(Debug, Default)]
pub struct CountingSink {
    pub count: u64,
}

impl TraceSink for CountingSink {
    fn record(&mut self, _event: &TraceEvent) -> Result<(), SinkError> {
        self.count += 1;
        Ok(())
    }

    fn reference(&self) -> String {
        format!("discarded:{}", self.count)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("empty trace file")]
    Empty,
}

/// Reads a JSON Lines trace.
pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceEvent>), TraceReadError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(TraceReadError::Empty)?;
    let header: TraceHeader =
        serde_json::from_str(&first?).map_err(|source| TraceReadError::Parse { line: 1, source })?;
    if header.trace_version != TRACE_VERSION {
        return Err(TraceReadError::Version(header.trace_version));
    }
    let mut events = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|source| TraceReadError::Parse { line: i + 1, source })?);
    }
    Ok((header, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CrudKind, OperationBinding, Provenance};
    use crate::spec::Method;

    pub(crate) fn event(id: u64) -> TraceEvent {
        TraceEvent {
            event_id: id,
            plan: RequestPlan {
                plan_id: id,
                binding: OperationBinding {
                    operation: "GET /books".into(),
                    resource: "book".into(),
                    crud_kind: CrudKind::ReadList,
                    provenance: Provenance::Inferred,
                },
                method: Method::Get,
                concrete_url: "/books".into(),
                headers: BTreeMap::new(),
                body: None,
                params: vec![],
                target: None,
            },
            response: ResponseRecord::from_result(&HttpExchangeResult::received(
                200,
                [("content-type".to_string(), "application/json".to_string())].into(),
                b"[]".to_vec(),
                Duration::from_millis(3),
            )),
            findings: vec![],
            dispatch_epoch: 0,
            completion_epoch: 0,
        }
    }

    #[test]
    fn first_event_gives_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut sink = JsonlSink::create(&path, &TraceHeader::new(Mode::Sequential, 1)).unwrap();
        sink.record(&event(1)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let (header, events) = read_trace(&path).unwrap();
        assert_eq!(header.trace_version, TRACE_VERSION);
        assert_eq!(events, [event(1)]);
    }

    #[test]
    fn thousand_events_are_numbered_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut sink = JsonlSink::create(&path, &TraceHeader::new(Mode::Sequential, 1)).unwrap();
        for id in 1..=1000 {
            sink.record(&event(id)).unwrap();
        }
        sink.finish().unwrap();
        let (_, events) = read_trace(&path).unwrap();
        assert_eq!(events.len(), 1000);
        assert!(events.iter().map(|e| e.event_id).eq(1..=1000));
    }

    #[test]
    fn binary_bodies_use_base64() {
        let result = HttpExchangeResult::received(200, BTreeMap::new(), vec![0xff, 0xfe, 0x00], Duration::ZERO);
        let record = ResponseRecord::from_result(&result);
        assert!(record.body_base64);
        assert_eq!(record.body_bytes(), [0xff, 0xfe, 0x00]);
        let text = serde_json::to_string(&record).unwrap();
        assert_eq!(serde_json::from_str::<ResponseRecord>(&text).unwrap(), record);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"trace_version\":9,\"mode\":\"sequential\",\"max_in_flight\":1}\n").unwrap();
        assert!(matches!(read_trace(&path), Err(TraceReadError::Version(9))));
    }
}
