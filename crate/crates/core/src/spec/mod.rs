//! OpenAPI 3.x ingestion into a resolved intermediate representation.
//!
//! [`load_spec`] parses a JSON or YAML document, resolves every local `$ref`,
//! and produces an [`ApiSpecIR`] that downstream modules use without ever
//! looking at the raw document again. [`export_spec`] writes the IR back out
//! as a self-contained OpenAPI 3.0 document, and [`lint_spec`] reports
//! specification weaknesses that limit what the exerciser can test.

mod export;
mod lint;
mod load;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use export::{export_spec, export_spec_bytes};
pub(crate) use export::schema_json;
pub use lint::{lint_spec, lint_spec_with, LintFinding, LintRule, Severity};
pub use load::{load_spec, load_spec_file};

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot parse document: {0}")]
    Parse(String),
    #[error("unresolved reference `{0}`")]
    UnresolvedRef(String),
    #[error("unsupported specification version: {0}")]
    UnsupportedVersion(String),
    #[error("cannot read specification: {0}")]
    Io(#[from] std::io::Error),
}

/// Input encoding of a specification document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Yaml,
}

impl Format {
    /// Guesses the format from a file extension; anything but `.json` is YAML.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Yaml,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "yaml" | "yml" => Ok(Format::Yaml),
            other => Err(format!("unknown format `{other}` (expected json or yaml)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Patch,
    Delete,
    Head,
    Options,
    Trace,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Get,
        Method::Post,
        Method::Put,
        Method::Patch,
        Method::Delete,
        Method::Head,
        Method::Options,
        Method::Trace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Patch => "PATCH",
            Method::Delete => "DELETE",
            Method::Head => "HEAD",
            Method::Options => "OPTIONS",
            Method::Trace => "TRACE",
        }
    }

    fn lower(self) -> &'static str {
        match self {
            Method::Get => "get",
            Method::Post => "post",
            Method::Put => "put",
            Method::Patch => "patch",
            Method::Delete => "delete",
            Method::Head => "head",
            Method::Options => "options",
            Method::Trace => "trace",
        }
    }

    /// True for methods that can change server state.
    pub fn is_mutating(self) -> bool {
        matches!(self, Method::Post | Method::Put | Method::Patch | Method::Delete)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown HTTP method `{s}`"))
    }
}

/// A response key: an exact code, a class such as `4XX`, or `default`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatusPattern {
    Exact(u16),
    Class(u8),
    Default,
}

impl StatusPattern {
    pub fn matches(self, status: u16) -> bool {
        match self {
            StatusPattern::Exact(code) => code == status,
            StatusPattern::Class(class) => status / 100 == class as u16,
            StatusPattern::Default => true,
        }
    }

    /// Lower rank wins when several patterns match one status.
    fn specificity(self) -> u8 {
        match self {
            StatusPattern::Exact(_) => 0,
            StatusPattern::Class(_) => 1,
            StatusPattern::Default => 2,
        }
    }

    /// The status class this pattern belongs to; `None` for `default`.
    pub fn class(self) -> Option<u8> {
        match self {
            StatusPattern::Exact(code) => Some((code / 100) as u8),
            StatusPattern::Class(class) => Some(class),
            StatusPattern::Default => None,
        }
    }
}

impl fmt::Display for StatusPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusPattern::Exact(code) => write!(f, "{code}"),
            StatusPattern::Class(class) => write!(f, "{class}XX"),
            StatusPattern::Default => f.write_str("default"),
        }
    }
}

impl FromStr for StatusPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("default") {
            return Ok(StatusPattern::Default);
        }
        let bytes = s.as_bytes();
        if bytes.len() == 3 && (b'1'..=b'5').contains(&bytes[0]) {
            if bytes[1..].eq_ignore_ascii_case(b"xx") {
                return Ok(StatusPattern::Class(bytes[0] - b'0'));
            }
            if let Ok(code) = s.parse::<u16>() {
                return Ok(StatusPattern::Exact(code));
            }
        }
        Err(format!("invalid response status `{s}`"))
    }
}

impl Serialize for StatusPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StatusPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A remark attached while loading: something in the document was ignored
/// or synthesized. Surfaced by the linter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Note {
    pub rule: LintRule,
    pub message: String,
}

impl Note {
    pub fn new(rule: LintRule, message: impl Into<String>) -> Note {
        Note {
            rule,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    #[default]
    Any,
    Object,
    Array,
    String,
    Integer,
    Number,
    Boolean,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::Any => "any",
            SchemaKind::Object => "object",
            SchemaKind::Array => "array",
            SchemaKind::String => "string",
            SchemaKind::Integer => "integer",
            SchemaKind::Number => "number",
            SchemaKind::Boolean => "boolean",
        }
    }
}

/// The supported JSON-schema constraint subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub enum_values: Option<Vec<Value>>,
    pub minimum: Option<f64>,
    pub maximum: Option<f64>,
    pub exclusive_minimum: bool,
    pub exclusive_maximum: bool,
    pub min_length: Option<u64>,
    pub max_length: Option<u64>,
    pub pattern: Option<String>,
    pub format: Option<String>,
    pub required: Vec<String>,
    pub properties: BTreeMap<String, SchemaNode>,
    pub additional_properties: bool,
    pub items: Option<Box<SchemaNode>>,
    pub min_items: Option<u64>,
    pub max_items: Option<u64>,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            enum_values: None,
            minimum: None,
            maximum: None,
            exclusive_minimum: false,
            exclusive_maximum: false,
            min_length: None,
            max_length: None,
            pattern: None,
            format: None,
            required: Vec::new(),
            properties: BTreeMap::new(),
            additional_properties: true,
            items: None,
            min_items: None,
            max_items: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchemaNode {
    pub kind: SchemaKind,
    pub nullable: bool,
    pub constraints: Constraints,
    pub notes: Vec<Note>,
}

impl SchemaNode {
    pub fn any() -> SchemaNode {
        SchemaNode::default()
    }

    pub fn of(kind: SchemaKind) -> SchemaNode {
        SchemaNode {
            kind,
            ..SchemaNode::default()
        }
    }

    /// Every note on this node and its descendants, depth first.
    pub fn all_notes(&self) -> Vec<&Note> {
        let mut out: Vec<&Note> = self.notes.iter().collect();
        for child in self.constraints.properties.values() {
            out.extend(child.all_notes());
        }
        if let Some(items) = &self.constraints.items {
            out.extend(items.all_notes());
        }
        out
    }

    /// The schema describing one element: `items` for arrays, else `self`.
    pub fn element(&self) -> &SchemaNode {
        match (&self.kind, &self.constraints.items) {
            (SchemaKind::Array, Some(items)) => items,
            _ => self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    BodyField,
}

impl ParamLocation {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamLocation::Path => "path",
            ParamLocation::Query => "query",
            ParamLocation::Header => "header",
            ParamLocation::BodyField => "body-field",
        }
    }
}

/// Name of the synthetic parameter standing for a whole non-object body.
pub const WHOLE_BODY_PARAM: &str = "$body";

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDef {
    pub name: String,
    pub location: ParamLocation,
    pub schema: SchemaNode,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseDef {
    pub status_pattern: StatusPattern,
    /// Declared media types, in document order.
    pub media_types: Vec<String>,
    /// Schema of the JSON media type, when one is declared with a schema.
    pub body_schema: Option<SchemaNode>,
}

impl ResponseDef {
    /// True when the response declares a JSON media type.
    pub fn declares_json(&self) -> bool {
        self.media_types.iter().any(|m| is_json_media_type(m))
    }
}

pub fn is_json_media_type(media: &str) -> bool {
    let essence = media.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    essence == "application/json" || essence.ends_with("+json") || essence == "*/*"
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperationDef {
    pub method: Method,
    pub path_template: String,
    pub operation_id: Option<String>,
    pub parameters: Vec<ParameterDef>,
    pub request_body_schema: Option<SchemaNode>,
    pub responses: BTreeMap<StatusPattern, ResponseDef>,
    pub notes: Vec<Note>,
}

impl OperationDef {
    /// Stable identifier, e.g. `GET /books/{bookId}`.
    pub fn key(&self) -> String {
        operation_key(self.method, &self.path_template)
    }

    pub fn param(&self, name: &str) -> Option<&ParameterDef> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn params_in(&self, location: ParamLocation) -> impl Iterator<Item = &ParameterDef> {
        self.parameters.iter().filter(move |p| p.location == location)
    }

    /// The most specific declared response for a status: exact code, then
    /// class, then `default`.
    pub fn response_for(&self, status: u16) -> Option<&ResponseDef> {
        self.responses
            .iter()
            .filter(|(pattern, _)| pattern.matches(status))
            .min_by_key(|(pattern, _)| pattern.specificity())
            .map(|(_, def)| def)
    }

    /// Schemas of 2XX responses that carry a body.
    pub fn success_schemas(&self) -> impl Iterator<Item = &SchemaNode> {
        self.responses
            .iter()
            .filter(|(p, _)| p.class() == Some(2))
            .filter_map(|(_, r)| r.body_schema.as_ref())
    }

    /// True when the path ends in a `{param}` segment.
    pub fn is_item_path(&self) -> bool {
        is_item_path(&self.path_template)
    }
}

pub fn operation_key(method: Method, path: &str) -> String {
    format!("{} {}", method.as_str(), path)
}

/// Literal and parameter segments of a path template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Literal(&'a str),
    Param(&'a str),
}

pub fn path_segments(template: &str) -> Vec<Segment<'_>> {
    template
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| match s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(name) => Segment::Param(name),
            None => Segment::Literal(s),
        })
        .collect()
}

pub fn is_item_path(template: &str) -> bool {
    matches!(path_segments(template).last(), Some(Segment::Param(_)))
}

/// Canonical resource name of a path: the singularized last literal
/// segment. `/customers/{id}` and `/customers` both give `customer`.
pub fn resource_of_path(template: &str) -> Option<String> {
    path_segments(template).iter().rev().find_map(|s| match s {
        Segment::Literal(noun) => {
            let name = crate::names::resource_name(noun);
            (!name.is_empty()).then_some(name)
        }
        Segment::Param(_) => None,
    })
}

/// A path parameter name qualified by the collection it indexes, so that a
/// bare `{id}` under `/books` reads as `book id`.
pub fn qualified_path_param(template: &str, param: &str) -> String {
    if !crate::names::is_generic_id(param) {
        return param.to_string();
    }
    let segments = path_segments(template);
    let pos = segments.iter().position(|s| *s == Segment::Param(param));
    let noun = pos.and_then(|i| {
        segments[..i].iter().rev().find_map(|s| match s {
            Segment::Literal(noun) => Some(crate::names::resource_name(noun)),
            Segment::Param(_) => None,
        })
    });
    match noun {
        Some(noun) => crate::names::qualify(param, &noun),
        None => param.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ApiSpecIR {
    pub title: String,
    pub base_paths: Vec<String>,
    /// Sorted by path template, then method.
    pub operations: Vec<OperationDef>,
    pub schemas: BTreeMap<String, SchemaNode>,
}

impl ApiSpecIR {
    pub fn operation(&self, key: &str) -> Option<&OperationDef> {
        self.operations.iter().find(|op| op.key() == key)
    }

    pub fn operation_index(&self, key: &str) -> Option<usize> {
        self.operations.iter().position(|op| op.key() == key)
    }

    /// Path prefix prepended to every operation path when building URLs.
    pub fn base_path(&self) -> &str {
        self.base_paths.first().map(String::as_str).unwrap_or("")
    }
}
