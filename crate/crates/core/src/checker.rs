//! Response checking: declared status codes, unexpected server errors,
//! response body schemas, and status predictions derived from tracked state.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::driver::HttpExchangeResult;
use crate::spec::{is_json_media_type, OperationDef, SchemaKind, SchemaNode, StatusPattern};
use crate::state::{Basis, StatusPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grade {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Info => "info",
            Grade::Warning => "warning",
            Grade::Error => "error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    SchemaViolation,
    UndefinedStatus,
    #[serde(rename = "server-error-5xx")]
    ServerError5xx,
    SemanticMismatch,
    NoResponse,
    ContentTypeUnchecked,
    IdExtractionFailure,
}

impl FindingKind {
    pub const ALL: [FindingKind; 7] = [
        FindingKind::SchemaViolation,
        FindingKind::UndefinedStatus,
        FindingKind::ServerError5xx,
        FindingKind::SemanticMismatch,
        FindingKind::NoResponse,
        FindingKind::ContentTypeUnchecked,
        FindingKind::IdExtractionFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::SchemaViolation => "schema-violation",
            FindingKind::UndefinedStatus => "undefined-status",
            FindingKind::ServerError5xx => "server-error-5xx",
            FindingKind::SemanticMismatch => "semantic-mismatch",
            FindingKind::NoResponse => "no-response",
            FindingKind::ContentTypeUnchecked => "content-type-unchecked",
            FindingKind::IdExtractionFailure => "id-extraction-failure",
        }
    }

    /// Grade under the default policy.
    pub fn default_grade(self) -> Grade {
        match self {
            FindingKind::SchemaViolation
            | FindingKind::UndefinedStatus
            | FindingKind::ServerError5xx
            | FindingKind::SemanticMismatch => Grade::Error,
            FindingKind::NoResponse | FindingKind::IdExtractionFailure => Grade::Warning,
            FindingKind::ContentTypeUnchecked => Grade::Info,
        }
    }
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FindingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FindingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown finding kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub grade: Grade,
    pub kind: FindingKind,
    /// Trace event the finding belongs to; 0 until the event is numbered.
    pub exchange_ref: u64,
    pub operation: String,
    pub detail: String,
    /// JSON path of a schema violation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<String>,
    /// Expected statuses of a semantic mismatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Vec<StatusPattern>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Basis>,
}

impl Finding {
    pub fn new(kind: FindingKind, operation: &str, detail: impl Into<String>) -> Finding {
        Finding {
            grade: kind.default_grade(),
            kind,
            exchange_ref: 0,
            operation: operation.to_string(),
            detail: detail.into(),
            json_path: None,
            expected: None,
            observed: None,
            basis: None,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}] #{} {}: {}",
            self.grade, self.kind, self.exchange_ref, self.operation, self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckPolicy {
    /// Accept a 5XX status when the operation declares that exact code.
    pub allow_declared_5xx: bool,
    /// Grade of a semantic mismatch whose prediction was stale-possible.
    pub stale_mismatch_grade: Grade,
}

impl Default for CheckPolicy {
    fn default() -> Self {
        CheckPolicy {
            allow_declared_5xx: false,
            stale_mismatch_grade: Grade::Warning,
        }
    }
}

/// Status checks: undeclared codes and server errors.
pub fn check_status(status: u16, operation: &OperationDef, policy: &CheckPolicy) -> Option<Finding> {
    let key = operation.key();
    if status >= 500 {
        let declared = operation.responses.contains_key(&StatusPattern::Exact(status));
        if declared && policy.allow_declared_5xx {
            return None;
        }
        let mut finding = Finding::new(
            FindingKind::ServerError5xx,
            &key,
            format!("server error {status}"),
        );
        finding.observed = Some(status);
        return Some(finding);
    }
    if operation.response_for(status).is_none() {
        let declared: Vec<String> = operation.responses.keys().map(|p| p.to_string()).collect();
        let mut finding = Finding::new(
            FindingKind::UndefinedStatus,
            &key,
            format!("status {status} is not declared (declared: {})", declared.join(", ")),
        );
        finding.observed = Some(status);
        return Some(finding);
    }
    None
}

/// Validates the response body against the schema declared for its status.
pub fn check_syntactic(response: &HttpExchangeResult, operation: &OperationDef) -> Vec<Finding> {
    let Some(status) = response.status else {
        return Vec::new();
    };
    let Some(def) = operation.response_for(status) else {
        return Vec::new();
    };
    let key = operation.key();
    let content_type = response
        .header("content-type")
        .map(|ct| ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase());
    let Some(schema) = &def.body_schema else {
        return match &content_type {
            Some(ct) if !response.body.is_empty() && !def.media_types.is_empty()
                && !def.media_types.iter().any(|m| m.eq_ignore_ascii_case(ct)) =>
            {
                vec![content_type_finding(&key, ct)]
            }
            _ => Vec::new(),
        };
    };
    if !def.declares_json() {
        return Vec::new();
    }
    if let Some(ct) = &content_type {
        if !is_json_media_type(ct) {
            return vec![content_type_finding(&key, ct)];
        }
    }
    let body: Value = match serde_json::from_slice(&response.body) {
        Ok(v) => v,
        Err(e) => {
            let mut finding = Finding::new(
                FindingKind::SchemaViolation,
                &key,
                format!("response body is not valid JSON: {e}"),
            );
            finding.json_path = Some("$".into());
            finding.observed = Some(status);
            return vec![finding];
        }
    };
    validate(&body, schema)
        .into_iter()
        .map(|v| {
            let mut finding = Finding::new(
                FindingKind::SchemaViolation,
                &key,
                format!("{}: {}", v.path, v.constraint),
            );
            finding.json_path = Some(v.path);
            finding.observed = Some(status);
            finding
        })
        .collect()
}

fn content_type_finding(operation: &str, content_type: &str) -> Finding {
    Finding::new(
        FindingKind::ContentTypeUnchecked,
        operation,
        format!("content type `{content_type}` is not declared; body not checked"),
    )
}

/// Compares the observed status against the prediction.
pub fn check_semantic(
    status: u16,
    prediction: &StatusPrediction,
    operation: &str,
    policy: &CheckPolicy,
) -> Option<Finding> {
    if prediction.expected.iter().any(|p| p.matches(status)) {
        return None;
    }
    let expected: Vec<String> = prediction.expected.iter().map(|p| p.to_string()).collect();
    let mut finding = Finding::new(
        FindingKind::SemanticMismatch,
        operation,
        format!(
            "expected {{{}}}, observed {status} ({}; {})",
            expected.join(", "),
            prediction.basis,
            prediction.rationale
        ),
    );
    if prediction.basis == Basis::StalePossible {
        finding.grade = policy.stale_mismatch_grade;
    }
    finding.expected = Some(prediction.expected.clone());
    finding.observed = Some(status);
    finding.basis = Some(prediction.basis);
    Some(finding)
}

/// One failed schema constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// JSON path, e.g. `$.items[2].name`.
    pub path: String,
    pub constraint: String,
}

/// Checks a JSON value against a schema. An empty result means conformance.
pub fn validate(value: &Value, schema: &SchemaNode) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_at(value, schema, "$", &mut out);
    out
}

fn violation(out: &mut Vec<Violation>, path: &str, constraint: String) {
    out.push(Violation {
        path: path.to_string(),
        constraint,
    });
}

fn validate_at(value: &Value, schema: &SchemaNode, path: &str, out: &mut Vec<Violation>) {
    if value.is_null() {
        if !schema.nullable && schema.kind != SchemaKind::Any {
            violation(out, path, "null is not allowed".into());
        }
        return;
    }
    let c = &schema.constraints;
    if let Some(values) = &c.enum_values {
        if !values.iter().any(|v| json_equal(v, value)) {
            violation(out, path, "value is not one of the enumerated values".into());
        }
    }
    match schema.kind {
        SchemaKind::Any => {}
        SchemaKind::Boolean => {
            if !value.is_boolean() {
                violation(out, path, "expected boolean".into());
            }
        }
        SchemaKind::Integer | SchemaKind::Number => {
            let Some(n) = value.as_f64() else {
                violation(out, path, format!("expected {}", schema.kind.as_str()));
                return;
            };
            if schema.kind == SchemaKind::Integer && !is_integer(value) {
                violation(out, path, "expected integer".into());
                return;
            }
            if let Some(min) = c.minimum {
                if n < min || (c.exclusive_minimum && n == min) {
                    let op = if c.exclusive_minimum { ">" } else { ">=" };
                    violation(out, path, format!("must be {op} {min}"));
                }
            }
            if let Some(max) = c.maximum {
                if n > max || (c.exclusive_maximum && n == max) {
                    let op = if c.exclusive_maximum { "<" } else { "<=" };
                    violation(out, path, format!("must be {op} {max}"));
                }
            }
        }
        SchemaKind::String => {
            let Some(s) = value.as_str() else {
                violation(out, path, "expected string".into());
                return;
            };
            let len = s.chars().count() as u64;
            if let Some(min) = c.min_length {
                if len < min {
                    violation(out, path, format!("length must be >= {min}"));
                }
            }
            if let Some(max) = c.max_length {
                if len > max {
                    violation(out, path, format!("length must be <= {max}"));
                }
            }
            if let Some(pattern) = &c.pattern {
                if matches_pattern(pattern, s) == Some(false) {
                    violation(out, path, format!("does not match pattern `{pattern}`"));
                }
            }
            if let Some(format) = &c.format {
                if !format_ok(format, s) {
                    violation(out, path, format!("not a valid {format}"));
                }
            }
        }
        SchemaKind::Array => {
            let Some(items) = value.as_array() else {
                violation(out, path, "expected array".into());
                return;
            };
            let n = items.len() as u64;
            if let Some(min) = c.min_items {
                if n < min {
                    violation(out, path, format!("must have >= {min} items"));
                }
            }
            if let Some(max) = c.max_items {
                if n > max {
                    violation(out, path, format!("must have <= {max} items"));
                }
            }
            if let Some(item_schema) = &c.items {
                for (i, item) in items.iter().enumerate() {
                    validate_at(item, item_schema, &format!("{path}[{i}]"), out);
                }
            }
        }
        SchemaKind::Object => {
            let Some(obj) = value.as_object() else {
                violation(out, path, "expected object".into());
                return;
            };
            for name in &c.required {
                if !obj.contains_key(name) {
                    violation(out, &child_path(path, name), "required field is missing".into());
                }
            }
            for (name, field) in obj {
                match c.properties.get(name) {
                    Some(field_schema) => {
                        validate_at(field, field_schema, &child_path(path, name), out)
                    }
                    None if !c.additional_properties => violation(
                        out,
                        &child_path(path, name),
                        "additional property is not allowed".into(),
                    ),
                    None => {}
                }
            }
        }
    }
}

fn child_path(path: &str, name: &str) -> String {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        format!("{path}.{name}")
    } else {
        format!("{path}[{}]", Value::String(name.to_string()))
    }
}

/// Integral JSON numbers, including `5.0`.
pub(crate) fn is_integer(value: &Value) -> bool {
    match value {
        Value::Number(n) => {
            n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.is_finite() && f.fract() == 0.0)
        }
        _ => false,
    }
}

fn json_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        _ => a == b,
    }
}

/// `None` when the pattern does not compile.
pub(crate) fn matches_pattern(pattern: &str, s: &str) -> Option<bool> {
    static CACHE: OnceLock<Mutex<HashMap<String, Option<Regex>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
    let re = cache
        .entry(pattern.to_string())
        .or_insert_with(|| Regex::new(pattern).ok());
    re.as_ref().map(|re| re.is_match(s))
}

pub(crate) fn format_ok(format: &str, s: &str) -> bool {
    match format {
        "date-time" => chrono::DateTime::parse_from_rfc3339(s).is_ok(),
        "date" => chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok(),
        _ => true,
    }
}
