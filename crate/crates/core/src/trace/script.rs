use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::TraceEvent;
use crate::checker::{validate, Finding, FindingKind, Grade};
use crate::driver::HttpExchangeResult;
use crate::generator::RequestPlan;
use crate::model::SemanticModel;
use crate::sampling::id_text;
use crate::spec::{
    load_spec, schema_json, path_segments, ApiSpecIR, Format, Method, ParamLocation,
    SchemaNode, Segment, StatusPattern, WHOLE_BODY_PARAM,
};
use crate::state::Mode;

pub const SCRIPT_VERSION: u32 = 1;

/// One request of a script. Strings of the form `${name}` stand for bound
/// symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// 1-based position.
    pub step: usize,
    pub operation: String,
    pub method: Method,
    pub url: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    /// Trace event the step came from.
    pub source_event: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub step: usize,
    /// JSON path into the producer's response body.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumer {
    pub step: usize,
    pub location: ParamLocation,
    pub parameter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicBinding {
    pub variable: String,
    pub producer: Producer,
    pub consumers: Vec<Consumer>,
    /// Value observed when the trace was recorded.
    pub recorded: Value,
}

/// What the last step must show for the failure to count as reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFailure {
    pub step: usize,
    pub kind: FindingKind,
    /// Declared statuses for an undefined-status failure, predicted ones
    /// for a semantic mismatch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub statuses: Vec<StatusPattern>,
    /// Response schema for a schema violation, as JSON Schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecreateScript {
    pub script_version: u32,
    pub mode: Mode,
    pub max_in_flight: usize,
    pub steps: Vec<ScriptStep>,
    pub bindings: Vec<SymbolicBinding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_failure: Option<ExpectedFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("malformed script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported script version {0}")]
    Version(u32),
    #[error("step {step} consumes `{variable}` before it is produced")]
    UnboundSymbol { step: usize, variable: String },
    #[error("expected failure names step {0}, which does not exist")]
    BadFailureStep(usize),
    #[error("embedded schema is invalid: {0}")]
    Schema(String),
}

impl RecreateScript {
    pub fn from_json(bytes: &[u8]) -> Result<RecreateScript, ScriptError> {
        let script: RecreateScript = serde_json::from_slice(bytes)?;
        if script.script_version != SCRIPT_VERSION {
            return Err(ScriptError::Version(script.script_version));
        }
        script.check()?;
        Ok(script)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    /// Checks that every symbol is produced before it is consumed.
    pub fn check(&self) -> Result<(), ScriptError> {
        let produced: BTreeMap<&str, usize> = self
            .bindings
            .iter()
            .map(|b| (b.variable.as_str(), b.producer.step))
            .collect();
        for step in &self.steps {
            for variable in symbols_in_step(step) {
                match produced.get(variable.as_str()) {
                    Some(&p) if p < step.step => {}
                    _ => {
                        return Err(ScriptError::UnboundSymbol {
                            step: step.step,
                            variable,
                        })
                    }
                }
            }
        }
        if let Some(f) = &self.expected_failure {
            if f.step == 0 || f.step > self.steps.len() {
                return Err(ScriptError::BadFailureStep(f.step));
            }
            f.schema_node()?;
        }
        Ok(())
    }
}

impl ExpectedFailure {
    /// Builds the predicate for `finding` observed at `step`.
    pub fn from_finding(finding: &Finding, step: usize, spec: &ApiSpecIR) -> ExpectedFailure {
        let op = spec.operation(&finding.operation);
        let statuses = match finding.kind {
            FindingKind::SemanticMismatch => finding.expected.clone().unwrap_or_default(),
            FindingKind::UndefinedStatus => op.map(|o| o.responses.keys().copied().collect()).unwrap_or_default(),
            _ => Vec::new(),
        };
        let schema = match finding.kind {
            FindingKind::SchemaViolation => op
                .and_then(|o| {
                    let status = finding.observed?;
                    o.response_for(status)?.body_schema.as_ref()
                })
                .map(schema_json),
            _ => None,
        };
        ExpectedFailure {
            step,
            kind: finding.kind,
            statuses,
            schema,
            json_path: finding.json_path.clone(),
            detail: finding.detail.clone(),
        }
    }

    fn schema_node(&self) -> Result<Option<SchemaNode>, ScriptError> {
        let Some(schema) = &self.schema else { return Ok(None) };
        let doc = json!({
            "openapi": "3.0.3",
            "info": {"title": "script", "version": "1"},
            "paths": {},
            "components": {"schemas": {"S": schema}},
        });
        let spec = load_spec(doc.to_string().as_bytes(), Format::Json).map_err(|e| ScriptError::Schema(e.to_string()))?;
        Ok(spec.schemas.get("S").cloned())
    }

    /// True when `response` shows the failure again.
    pub fn matches(&self, response: &HttpExchangeResult) -> bool {
        let status = response.status;
        match self.kind {
            FindingKind::NoResponse => response.transport_error.is_some(),
            FindingKind::ServerError5xx => status.is_some_and(|s| s >= 500),
            FindingKind::UndefinedStatus | FindingKind::SemanticMismatch => {
                status.is_some_and(|s| !self.statuses.iter().any(|p| p.matches(s)))
            }
            FindingKind::SchemaViolation => {
                let Ok(Some(schema)) = self.schema_node() else { return false };
                if status.is_none() {
                    return false;
                }
                let Some(body) = response.json.as_ref() else {
                    return !response.body.is_empty();
                };
                let violations = validate(body, &schema);
                match &self.json_path {
                    Some(path) => violations.iter().any(|v| &v.path == path),
                    None => !violations.is_empty(),
                }
            }
            FindingKind::ContentTypeUnchecked => response
                .header("content-type")
                .is_none_or(|ct| !crate::spec::is_json_media_type(ct.split(';').next().unwrap_or(""))),
            FindingKind::IdExtractionFailure => response.is_success(),
        }
    }
}

/// Names of the `${name}` symbols a string consists of or contains.
fn symbols_in(text: &str, out: &mut BTreeSet<String>) {
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else { break };
        out.insert(after[..end].to_string());
        rest = &after[end + 1..];
    }
}

fn symbols_in_value(value: &Value, out: &mut BTreeSet<String>) {
    match value {
        Value::String(s) => symbols_in(s, out),
        Value::Array(items) => items.iter().for_each(|v| symbols_in_value(v, out)),
        Value::Object(fields) => fields.values().for_each(|v| symbols_in_value(v, out)),
        _ => {}
    }
}

pub(crate) fn symbols_in_step(step: &ScriptStep) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    symbols_in(&step.url, &mut out);
    step.headers.values().for_each(|v| symbols_in(v, &mut out));
    if let Some(body) = &step.body {
        symbols_in_value(body, &mut out);
    }
    out
}

pub(crate) fn placeholder(variable: &str) -> String {
    format!("${{{variable}}}")
}

/// A value the request of `event` carried, as identifier text.
fn carried(plan: &RequestPlan) -> BTreeSet<String> {
    fn collect(value: &Value, out: &mut BTreeSet<String>) {
        match value {
            Value::Array(items) => items.iter().for_each(|v| collect(v, out)),
            Value::Object(fields) => fields.values().for_each(|v| collect(v, out)),
            v => out.extend(id_text(v)),
        }
    }
    let mut out = BTreeSet::new();
    for p in &plan.params {
        collect(&p.value, &mut out);
    }
    out
}

struct Produced {
    step: usize,
    field: String,
    value: Value,
    text: String,
    variable: Option<String>,
}

/// Identifier fields a successful object response yields.
fn produced_ids(event: &TraceEvent, model: &SemanticModel) -> Vec<(String, Value)> {
    let ok = event.response.status.is_some_and(|s| (200..300).contains(&s));
    if !ok {
        return Vec::new();
    }
    let Some(Value::Object(body)) = event.response.json() else { return Vec::new() };
    let Some(resource) = model.resource(&event.plan.binding.resource) else { return Vec::new() };
    let sent = carried(&event.plan);
    resource
        .id_field_names
        .iter()
        .filter_map(|f| body.get(f).map(|v| (f.clone(), v.clone())))
        .filter(|(_, v)| id_text(v).is_some_and(|t| !sent.contains(&t)))
        .collect()
}

/// Replaces `value` (identifier text `text`) with `symbol` wherever a
/// parameter of `plan` carries it. Returns the consuming parameters.
fn substitute(step: &mut ScriptStep, plan: &RequestPlan, text: &str, symbol: &str) -> Vec<(ParamLocation, String)> {
    let mut consumed = Vec::new();
    let holds = |v: &Value| -> bool {
        match v {
            Value::Array(items) => items.iter().any(|i| id_text(i).as_deref() == Some(text)),
            other => id_text(other).as_deref() == Some(text),
        }
    };
    let template = plan.binding.operation.split_once(' ').map_or("", |(_, p)| p);
    let template_segments = path_segments(template);
    for p in plan.params.iter().filter(|p| holds(&p.value)) {
        match p.location {
            ParamLocation::Path => {
                let (path, query) = match step.url.split_once('?') {
                    Some((a, b)) => (a.to_string(), Some(b.to_string())),
                    None => (step.url.clone(), None),
                };
                let mut segments: Vec<String> = path.split('/').map(str::to_string).collect();
                let offset = segments.len().saturating_sub(template_segments.len());
                for (i, seg) in template_segments.iter().enumerate() {
                    if *seg == Segment::Param(p.name.as_str()) {
                        if let Some(s) = segments.get_mut(offset + i) {
                            let parts: Vec<String> = s
                                .split(',')
                                .map(|part| if decode(part) == text { symbol.to_string() } else { part.to_string() })
                                .collect();
                            *s = parts.join(",");
                        }
                    }
                }
                step.url = segments.join("/");
                if let Some(q) = query {
                    step.url.push('?');
                    step.url.push_str(&q);
                }
            }
            ParamLocation::Query => {
                if let Some((path, query)) = step.url.split_once('?') {
                    let rewritten: Vec<String> = query
                        .split('&')
                        .map(|pair| match pair.split_once('=') {
                            Some((k, v)) if decode(k) == p.name && decode(v) == text => format!("{k}={symbol}"),
                            _ => pair.to_string(),
                        })
                        .collect();
                    step.url = format!("{path}?{}", rewritten.join("&"));
                }
            }
            ParamLocation::Header => {
                if let Some(v) = step.headers.get_mut(&p.name.to_ascii_lowercase()) {
                    if v == text {
                        *v = symbol.to_string();
                    }
                }
            }
            ParamLocation::BodyField => {
                if let Some(body) = step.body.as_mut() {
                    if p.name == WHOLE_BODY_PARAM {
                        replace_in(body, text, symbol);
                    } else if let Some(field) = body.get_mut(&p.name) {
                        replace_in(field, text, symbol);
                    }
                }
            }
        }
        consumed.push((p.location, p.name.clone()));
    }
    consumed
}

fn decode(text: &str) -> String {
    percent_encoding::percent_decode_str(text).decode_utf8_lossy().into_owned()
}

fn replace_in(value: &mut Value, text: &str, symbol: &str) {
    match value {
        Value::Array(items) => items.iter_mut().for_each(|v| replace_in(v, text, symbol)),
        Value::Object(fields) => fields.values_mut().for_each(|v| replace_in(v, text, symbol)),
        v => {
            if id_text(v).as_deref() == Some(text) {
                *v = Value::String(symbol.to_string());
            }
        }
    }
}

/// Turns a trace ending in a failure into a script whose identifiers are
/// symbols bound to the responses that produced them. Steps follow
/// dispatch order; the failing event is last.
pub fn bind_symbols(events: &[TraceEvent], model: &SemanticModel, spec: &ApiSpecIR) -> RecreateScript {
    let mut ordered: Vec<&TraceEvent> = events.iter().collect();
    if let Some((last, rest)) = ordered.split_last_mut() {
        let last = *last;
        rest.sort_by_key(|e| e.plan.plan_id);
        let rest: Vec<&TraceEvent> = rest.to_vec();
        ordered = rest;
        ordered.push(last);
    }

    let mut steps = Vec::new();
    let mut produced: Vec<Produced> = Vec::new();
    let mut bindings: BTreeMap<String, SymbolicBinding> = BTreeMap::new();

    for (i, event) in ordered.iter().enumerate() {
        let number = i + 1;
        let plan = &event.plan;
        let mut step = ScriptStep {
            step: number,
            operation: plan.binding.operation.clone(),
            method: plan.method,
            url: plan.concrete_url.clone(),
            headers: plan.headers.clone(),
            body: plan.body.clone(),
            source_event: event.event_id,
        };
        let mut done = BTreeSet::new();
        for p in produced.iter_mut().rev() {
            if !done.insert(p.text.clone()) {
                continue;
            }
            let variable = match &p.variable {
                Some(v) => v.clone(),
                None => {
                    let base = format!("{}_id", ordered[p.step - 1].plan.binding.resource);
                    (1..)
                        .map(|k| if k == 1 { base.clone() } else { format!("{base}_{k}") })
                        .find(|name| !bindings.contains_key(name))
                        .expect("unbounded names")
                }
            };
            let consumed = substitute(&mut step, plan, &p.text, &placeholder(&variable));
            if consumed.is_empty() {
                continue;
            }
            p.variable = Some(variable.clone());
            let binding = bindings.entry(variable.clone()).or_insert_with(|| SymbolicBinding {
                variable: variable.clone(),
                producer: Producer {
                    step: p.step,
                    path: format!("$.{}", p.field),
                },
                consumers: Vec::new(),
                recorded: p.value.clone(),
            });
            binding.consumers.extend(consumed.into_iter().map(|(location, parameter)| Consumer {
                step: number,
                location,
                parameter,
            }));
        }
        for (field, value) in produced_ids(event, model) {
            let text = id_text(&value).expect("filtered to identifiers");
            produced.retain(|p| p.text != text || p.variable.is_some());
            produced.push(Produced {
                step: number,
                field,
                value,
                text,
                variable: None,
            });
        }
        steps.push(step);
    }

    let expected_failure = ordered.last().and_then(|last| {
        let finding = last
            .findings
            .iter()
            .find(|f| f.grade == Grade::Error)
            .or_else(|| last.findings.first())?;
        Some(ExpectedFailure::from_finding(finding, steps.len(), spec))
    });
    let mut bindings: Vec<SymbolicBinding> = bindings.into_values().collect();
    bindings.sort_by_key(|b| (b.producer.step, b.variable.clone()));
    RecreateScript {
        script_version: SCRIPT_VERSION,
        mode: Mode::Sequential,
        max_in_flight: 1,
        steps,
        bindings,
        expected_failure,
    }
}
