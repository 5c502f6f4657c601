use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    qualified_path_param, resource_of_path, ApiSpecIR, Method, OperationDef, ParamLocation,
    SchemaKind, StatusPattern,
};
use crate::names::{match_names, qualify, DEFAULT_THRESHOLD};

/// The lint-rule catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LintRule {
    /// A response that should carry a body declares no schema for it.
    #[serde(rename = "missing-response-schema")]
    MissingResponseSchema,
    /// A path parameter that no operation's response could have produced.
    #[serde(rename = "orphan-path-parameter")]
    OrphanPathParameter,
    /// An operation declares no client-error response.
    #[serde(rename = "missing-4xx-responses")]
    Missing4xxResponses,
    /// A DELETE whose path does not end in an identifier.
    #[serde(rename = "delete-without-id")]
    DeleteWithoutId,
    /// A schema keyword the checker ignores; the schema is loosened.
    #[serde(rename = "unsupported-schema-keyword")]
    UnsupportedSchemaKeyword,
    /// A parameter or media type the generator does not produce.
    #[serde(rename = "unsupported-parameter-location")]
    UnsupportedParameterLocation,
    /// A `{param}` in a path with no matching declaration.
    #[serde(rename = "undeclared-path-parameter")]
    UndeclaredPathParameter,
    /// A dependency cycle was broken by dropping its weakest edge.
    #[serde(rename = "dependency-cycle-broken")]
    DependencyCycleBroken,
    /// A create response has no field recognizable as the new identifier.
    #[serde(rename = "unextractable-id")]
    UnextractableId,
}

impl LintRule {
    pub const ALL: [LintRule; 9] = [
        LintRule::MissingResponseSchema,
        LintRule::OrphanPathParameter,
        LintRule::Missing4xxResponses,
        LintRule::DeleteWithoutId,
        LintRule::UnsupportedSchemaKeyword,
        LintRule::UnsupportedParameterLocation,
        LintRule::UndeclaredPathParameter,
        LintRule::DependencyCycleBroken,
        LintRule::UnextractableId,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LintRule::MissingResponseSchema => "missing-response-schema",
            LintRule::OrphanPathParameter => "orphan-path-parameter",
            LintRule::Missing4xxResponses => "missing-4xx-responses",
            LintRule::DeleteWithoutId => "delete-without-id",
            LintRule::UnsupportedSchemaKeyword => "unsupported-schema-keyword",
            LintRule::UnsupportedParameterLocation => "unsupported-parameter-location",
            LintRule::UndeclaredPathParameter => "undeclared-path-parameter",
            LintRule::DependencyCycleBroken => "dependency-cycle-broken",
            LintRule::UnextractableId => "unextractable-id",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            LintRule::OrphanPathParameter
            | LintRule::DeleteWithoutId
            | LintRule::UndeclaredPathParameter => Severity::Error,
            _ => Severity::Warning,
        }
    }
}

impl fmt::Display for LintRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LintRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LintRule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown lint rule `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule_id: LintRule,
    pub severity: Severity,
    /// Operation key, or another locator for non-operation findings.
    pub location: String,
    pub message: String,
}

impl LintFinding {
    pub fn new(rule: LintRule, location: impl Into<String>, message: impl Into<String>) -> Self {
        LintFinding {
            rule_id: rule,
            severity: rule.severity(),
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}] {}: {}",
            self.severity, self.rule_id, self.location, self.message
        )
    }
}

/// Reports specification weaknesses. Output is sorted and deduplicated, so
/// equal specs give equal lists.
pub fn lint_spec(spec: &ApiSpecIR) -> Vec<LintFinding> {
    lint_spec_with(spec, DEFAULT_THRESHOLD)
}

/// [`lint_spec`] with an explicit name-matching threshold.
pub fn lint_spec_with(spec: &ApiSpecIR, threshold: f64) -> Vec<LintFinding> {
    let mut findings = BTreeSet::new();
    let produced = produced_fields(spec);

    for op in &spec.operations {
        let key = op.key();
        for note in op_notes(op) {
            findings.insert(LintFinding::new(note.rule, &key, &note.message));
        }

        for (pattern, response) in &op.responses {
            let exempt = matches!(pattern, StatusPattern::Exact(204 | 205 | 304))
                || matches!(pattern.class(), Some(1 | 3))
                || op.method == Method::Head;
            let wants_json = response.media_types.is_empty() || response.declares_json();
            if !exempt && wants_json && response.body_schema.is_none() {
                findings.insert(LintFinding::new(
                    LintRule::MissingResponseSchema,
                    &key,
                    format!("response {pattern} declares no body schema"),
                ));
            }
        }

        let has_4xx = op
            .responses
            .keys()
            .any(|p| p.class() == Some(4) || *p == StatusPattern::Default);
        if !has_4xx {
            findings.insert(LintFinding::new(
                LintRule::Missing4xxResponses,
                &key,
                "no 4XX or default response is declared",
            ));
        }

        if op.method == Method::Delete && !op.is_item_path() {
            findings.insert(LintFinding::new(
                LintRule::DeleteWithoutId,
                &key,
                "DELETE path does not end in an identifier parameter",
            ));
        }

        for param in op.params_in(ParamLocation::Path) {
            let wanted = qualified_path_param(&op.path_template, &param.name);
            let best = produced
                .iter()
                .map(|field| match_names(&wanted, field))
                .fold(0.0, f64::max);
            if best < threshold {
                findings.insert(LintFinding::new(
                    LintRule::OrphanPathParameter,
                    &key,
                    format!("no operation returns a value for path parameter `{}`", param.name),
                ));
            }
        }

        if op.method == Method::Post && !op.is_item_path() {
            if let Some(resource) = resource_of_path(&op.path_template) {
                let own_id = format!("{resource} id");
                let mut schemas = op.success_schemas().peekable();
                let declared = schemas.peek().is_some();
                let found = schemas.any(|s| {
                    s.constraints
                        .properties
                        .keys()
                        .any(|f| match_names(&qualify(f, &resource), &own_id) >= threshold)
                });
                if declared && !found {
                    findings.insert(LintFinding::new(
                        LintRule::UnextractableId,
                        &key,
                        format!("create response has no field naming the new {resource}"),
                    ));
                }
            }
        }
    }
    let mut findings: Vec<LintFinding> = findings.into_iter().collect();
    findings.sort_by(|a, b| {
        (&a.location, a.rule_id, &a.message).cmp(&(&b.location, b.rule_id, &b.message))
    });
    findings
}

fn op_notes(op: &OperationDef) -> Vec<&super::Note> {
    let mut notes: Vec<&super::Note> = op.notes.iter().collect();
    for p in &op.parameters {
        if p.location != ParamLocation::BodyField {
            notes.extend(p.schema.all_notes());
        }
    }
    if let Some(body) = &op.request_body_schema {
        notes.extend(body.all_notes());
    }
    for response in op.responses.values() {
        if let Some(schema) = &response.body_schema {
            notes.extend(schema.all_notes());
        }
    }
    notes
}

/// Names of top-level fields any successful response can return, with bare
/// `id` fields qualified by the operation's resource.
fn produced_fields(spec: &ApiSpecIR) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for op in &spec.operations {
        let resource = resource_of_path(&op.path_template).unwrap_or_default();
        for schema in op.success_schemas() {
            let element = schema.element();
            if element.kind == SchemaKind::Object {
                for field in element.constraints.properties.keys() {
                    out.insert(qualify(field, &resource));
                }
            }
        }
    }
    out
}
