use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use rexer_core::checker::{Finding, FindingKind, Grade};
use rexer_core::generator::{RunConfig, RunResult, Verdict};
use rexer_core::state::Mode;
use rexer_core::trace::{read_trace, TraceEvent, TraceHeader};
use serde::{Deserialize, Serialize};

use crate::print_json;

pub const REPORT_VERSION: u32 = 1;

/// Findings listed in text output.
const LISTED: usize = 20;

/// What `fuzz` writes next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub endpoint: String,
    pub spec: PathBuf,
    pub seed: u64,
    pub mode: Mode,
    pub max_in_flight: usize,
    pub elapsed_ms: u64,
    /// Count of kept findings per kind.
    pub finding_kinds: BTreeMap<FindingKind, u64>,
    pub result: RunResult,
}

impl RunReport {
    pub fn new(endpoint: &str, spec: &Path, config: &RunConfig, elapsed: Duration, result: RunResult) -> RunReport {
        RunReport {
            report_version: REPORT_VERSION,
            endpoint: endpoint.to_string(),
            spec: spec.to_path_buf(),
            seed: config.master_seed,
            mode: config.effective_mode(),
            max_in_flight: config.window(),
            elapsed_ms: elapsed.as_millis() as u64,
            finding_kinds: kind_counts(&result.findings),
            result,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn render(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        let verdict = match r.verdict {
            Verdict::Passed => "PASSED",
            Verdict::Failed => "FAILED",
        };
        let _ = writeln!(
            out,
            "{verdict} ({}) after {} requests in {:.1}s against {}",
            serde_plain(&r.stop_reason),
            r.counters.requests,
            self.elapsed_ms as f64 / 1000.0,
            self.endpoint
        );
        let _ = writeln!(
            out,
            "seed {}, {} mode, window {}, peak in flight {}",
            self.seed,
            serde_plain(&self.mode),
            self.max_in_flight,
            r.counters.peak_in_flight
        );
        render_grades(&mut out, &r.counters.findings);
        render_kinds(&mut out, &self.finding_kinds);
        render_findings(&mut out, r.findings.iter());
        out
    }
}

fn kind_counts<'a>(findings: impl IntoIterator<Item = &'a Finding>) -> BTreeMap<FindingKind, u64> {
    let mut counts = BTreeMap::new();
    for f in findings {
        *counts.entry(f.kind).or_default() += 1;
    }
    counts
}

fn serde_plain(value: &impl Serialize) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn render_grades(out: &mut String, grades: &BTreeMap<Grade, u64>) {
    let text: Vec<String> = [Grade::Error, Grade::Warning, Grade::Info]
        .iter()
        .map(|g| format!("{} {g}", grades.get(g).copied().unwrap_or(0)))
        .collect();
    let _ = writeln!(out, "findings: {}", text.join(", "));
}

fn render_kinds(out: &mut String, kinds: &BTreeMap<FindingKind, u64>) {
    for (kind, n) in kinds {
        let _ = writeln!(out, "  {kind}: {n}");
    }
}

fn render_findings<'a>(out: &mut String, findings: impl Iterator<Item = &'a Finding>) {
    let mut shown = 0;
    let mut rest = 0;
    for f in findings.filter(|f| f.grade == Grade::Error) {
        if shown < LISTED {
            let _ = writeln!(out, "  {f}");
            shown += 1;
        } else {
            rest += 1;
        }
    }
    if rest > 0 {
        let _ = writeln!(out, "  ... {rest} more errors");
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON written by `fuzz`, or a trace file.
    path: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Summary of a trace file.
#[derive(Debug, Serialize)]
struct TraceSummary {
    header: TraceHeader,
    events: usize,
    per_operation: BTreeMap<String, u64>,
    statuses: BTreeMap<String, u64>,
    findings: BTreeMap<Grade, u64>,
    finding_kinds: BTreeMap<FindingKind, u64>,
    first_error_event: Option<u64>,
}

impl TraceSummary {
    fn new(header: TraceHeader, events: &[TraceEvent]) -> TraceSummary {
        let mut per_operation = BTreeMap::new();
        let mut statuses = BTreeMap::new();
        let mut findings = BTreeMap::new();
        for e in events {
            *per_operation.entry(e.plan.binding.operation.clone()).or_default() += 1;
            let status = e.response.status.map_or("none".to_string(), |s| s.to_string());
            *statuses.entry(status).or_default() += 1;
            for f in &e.findings {
                *findings.entry(f.grade).or_default() += 1;
            }
        }
        TraceSummary {
            header,
            events: events.len(),
            per_operation,
            statuses,
            findings,
            finding_kinds: kind_counts(events.iter().flat_map(|e| &e.findings)),
            first_error_event: events
                .iter()
                .find(|e| e.findings.iter().any(|f| f.grade == Grade::Error))
                .map(|e| e.event_id),
        }
    }

    fn render(&self, events: &[TraceEvent]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "trace: {} events, {} mode, window {}",
            self.events,
            serde_plain(&self.header.mode),
            self.header.max_in_flight
        );
        if let Some(endpoint) = &self.header.endpoint {
            let _ = writeln!(out, "endpoint: {endpoint}");
        }
        let _ = writeln!(out, "operations:");
        for (op, n) in &self.per_operation {
            let _ = writeln!(out, "  {op}: {n}");
        }
        let statuses: Vec<String> = self.statuses.iter().map(|(s, n)| format!("{s}x{n}")).collect();
        let _ = writeln!(out, "statuses: {}", statuses.join(" "));
        render_grades(&mut out, &self.findings);
        render_kinds(&mut out, &self.finding_kinds);
        render_findings(&mut out, events.iter().flat_map(|e| &e.findings));
        out
    }
}

pub fn run(args: ReportArgs) -> anyhow::Result<i32> {
    let bytes = std::fs::read(&args.path).with_context(|| format!("cannot read {}", args.path.display()))?;
    let first_line = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    let is_trace = serde_json::from_slice::<serde_json::Value>(first_line)
        .ok()
        .is_some_and(|v| v.get("trace_version").is_some());
    if is_trace {
        let (header, events) = read_trace(&args.path)?;
        let summary = TraceSummary::new(header, &events);
        if args.json {
            print_json(&summary);
        } else {
            print!("{}", summary.render(&events));
        }
        return Ok(0);
    }
    let report: RunReport =
        serde_json::from_slice(&bytes).with_context(|| format!("{} is neither a report nor a trace", args.path.display()))?;
    if report.report_version != REPORT_VERSION {
        bail!("unsupported report version {}", report.report_version);
    }
    if args.json {
        print_json(&report);
    } else {
        print!("{}", report.render());
    }
    Ok(0)
}
