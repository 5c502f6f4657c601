use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use super::{
    ApiSpecIR, Constraints, Format, LintRule, Method, Note, OperationDef, ParamLocation,
    ParameterDef, ResponseDef, SchemaKind, SchemaNode, SpecError, StatusPattern,
    WHOLE_BODY_PARAM,
};

const MAX_REF_HOPS: usize = 32;
pub(super) const NOTES_KEY: &str = "x-rexer-notes";

/// Schema keys that carry no validation meaning.
const ANNOTATIONS: &[&str] = &[
    "description",
    "title",
    "example",
    "examples",
    "default",
    "readOnly",
    "writeOnly",
    "deprecated",
    "xml",
    "externalDocs",
    "discriminator",
    "$schema",
    "$id",
    "$comment",
    "contentMediaType",
    "contentEncoding",
];

/// Schema keys handled by the loader.
const HANDLED: &[&str] = &[
    "$ref",
    "type",
    "nullable",
    "enum",
    "const",
    "minimum",
    "maximum",
    "exclusiveMinimum",
    "exclusiveMaximum",
    "minLength",
    "maxLength",
    "pattern",
    "format",
    "required",
    "properties",
    "additionalProperties",
    "items",
    "minItems",
    "maxItems",
    "allOf",
    "oneOf",
    "anyOf",
    NOTES_KEY,
];

/// Loads and resolves an OpenAPI 3.x document.
pub fn load_spec(document: &[u8], format: Format) -> Result<ApiSpecIR, SpecError> {
    let root = parse_document(document, format)?;
    Loader::new(&root).load()
}

/// Reads a specification file, detecting the format from its extension
/// unless `format` is given.
pub fn load_spec_file(path: &Path, format: Option<Format>) -> Result<ApiSpecIR, SpecError> {
    let bytes = std::fs::read(path)?;
    load_spec(&bytes, format.unwrap_or_else(|| Format::from_path(path)))
}

fn parse_document(document: &[u8], format: Format) -> Result<Value, SpecError> {
    let value = match format {
        Format::Json => {
            serde_json::from_slice(document).map_err(|e| SpecError::Parse(e.to_string()))?
        }
        Format::Yaml => {
            let yaml: serde_yaml::Value =
                serde_yaml::from_slice(document).map_err(|e| SpecError::Parse(e.to_string()))?;
            yaml_to_json(yaml)?
        }
    };
    if !value.is_object() {
        return Err(SpecError::Parse("document root is not a mapping".into()));
    }
    Ok(value)
}

fn yaml_to_json(value: serde_yaml::Value) -> Result<Value, SpecError> {
    use serde_yaml::Value as Y;
    Ok(match value {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map(Value::Number)
                    .ok_or_else(|| SpecError::Parse(format!("non-finite number {n}")))?
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(items) => Value::Array(
            items
                .into_iter()
                .map(yaml_to_json)
                .collect::<Result<_, _>>()?,
        ),
        Y::Mapping(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    other => {
                        return Err(SpecError::Parse(format!(
                            "unsupported mapping key {other:?}"
                        )))
                    }
                };
                out.insert(key, yaml_to_json(v)?);
            }
            Value::Object(out)
        }
        Y::Tagged(tagged) => yaml_to_json(tagged.value)?,
    })
}

fn parse_err(msg: impl Into<String>) -> SpecError {
    SpecError::Parse(msg.into())
}

struct Loader<'a> {
    root: &'a Value,
    stack: Vec<String>,
}

impl<'a> Loader<'a> {
    fn new(root: &'a Value) -> Self {
        Loader {
            root,
            stack: Vec::new(),
        }
    }

    fn load(mut self) -> Result<ApiSpecIR, SpecError> {
        self.check_version()?;
        let root = self.root;
        let title = root
            .pointer("/info/title")
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string();

        let mut base_paths = Vec::new();
        if let Some(servers) = root.get("servers").and_then(Value::as_array) {
            for server in servers {
                if let Some(url) = server.get("url").and_then(Value::as_str) {
                    let path = server_path(url);
                    if !path.is_empty() && !base_paths.contains(&path) {
                        base_paths.push(path);
                    }
                }
            }
        }

        let mut schemas = BTreeMap::new();
        if let Some(defs) = root.pointer("/components/schemas").and_then(Value::as_object) {
            for (name, def) in defs {
                let reference = format!("#/components/schemas/{}", escape_pointer(name));
                self.stack.push(reference);
                let node = self.schema(def);
                self.stack.pop();
                schemas.insert(name.clone(), node?);
            }
        }

        let mut operations = Vec::new();
        if let Some(paths) = root.get("paths") {
            let paths = paths
                .as_object()
                .ok_or_else(|| parse_err("`paths` is not a mapping"))?;
            for (path, item) in paths {
                if path.starts_with("x-") {
                    continue;
                }
                if !path.starts_with('/') {
                    return Err(parse_err(format!("path `{path}` does not start with `/`")));
                }
                let item = self.deref(item)?;
                operations.extend(self.path_item(path, item)?);
            }
        }
        operations.sort_by(|a, b| {
            (a.path_template.as_str(), a.method).cmp(&(b.path_template.as_str(), b.method))
        });

        Ok(ApiSpecIR {
            title,
            base_paths,
            operations,
            schemas,
        })
    }

    fn check_version(&self) -> Result<(), SpecError> {
        let version = match self.root.get("openapi") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(SpecError::UnsupportedVersion("`openapi` is not a string".into())),
            None if self.root.get("swagger").is_some() => {
                return Err(SpecError::UnsupportedVersion(
                    "Swagger 2.0 documents are not supported; convert to OpenAPI 3.x".into(),
                ))
            }
            None => {
                return Err(SpecError::UnsupportedVersion(
                    "missing `openapi` version field".into(),
                ))
            }
        };
        if version.starts_with("3.") || version == "3" {
            Ok(())
        } else {
            Err(SpecError::UnsupportedVersion(format!(
                "OpenAPI {version}; only 3.x is supported"
            )))
        }
    }

    fn lookup(&self, reference: &str) -> Result<&'a Value, SpecError> {
        let pointer = reference
            .strip_prefix('#')
            .ok_or_else(|| SpecError::UnresolvedRef(reference.to_string()))?;
        self.root
            .pointer(pointer)
            .ok_or_else(|| SpecError::UnresolvedRef(reference.to_string()))
    }

    /// Follows `$ref` chains on non-schema objects.
    fn deref(&self, mut value: &'a Value) -> Result<&'a Value, SpecError> {
        for _ in 0..MAX_REF_HOPS {
            match value.get("$ref").and_then(Value::as_str) {
                Some(reference) => value = self.lookup(reference)?,
                None => return Ok(value),
            }
        }
        Err(parse_err("reference chain too long or circular"))
    }

    fn path_item(&mut self, path: &str, item: &'a Value) -> Result<Vec<OperationDef>, SpecError> {
        let item = item
            .as_object()
            .ok_or_else(|| parse_err(format!("path item `{path}` is not a mapping")))?;
        let shared = match item.get("parameters") {
            Some(list) => self.parameter_list(list, path)?,
            None => Vec::new(),
        };
        let mut ops = Vec::new();
        for method in Method::ALL {
            if let Some(op) = item.get(method.lower()) {
                let op = self.deref(op)?;
                ops.push(self.operation(method, path, op, &shared)?);
            }
        }
        Ok(ops)
    }

    fn parameter_list(
        &mut self,
        list: &'a Value,
        context: &str,
    ) -> Result<Vec<RawParam<'a>>, SpecError> {
        let list = list
            .as_array()
            .ok_or_else(|| parse_err(format!("parameters of `{context}` is not a list")))?;
        list.iter()
            .map(|p| {
                let p = self.deref(p)?;
                let name = p
                    .get("name")
                    .and_then(Value::as_str)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| parse_err(format!("parameter without a name in `{context}`")))?;
                let location = p
                    .get("in")
                    .and_then(Value::as_str)
                    .ok_or_else(|| parse_err(format!("parameter `{name}` has no `in`")))?;
                Ok(RawParam {
                    name,
                    location,
                    value: p,
                })
            })
            .collect()
    }

    fn operation(
        &mut self,
        method: Method,
        path: &str,
        op: &'a Value,
        shared: &[RawParam<'a>],
    ) -> Result<OperationDef, SpecError> {
        let key = super::operation_key(method, path);
        let mut notes = Vec::new();
        let mut raw: Vec<RawParam<'a>> = shared.to_vec();
        if let Some(list) = op.get("parameters") {
            for p in self.parameter_list(list, &key)? {
                match raw
                    .iter_mut()
                    .find(|r| r.name == p.name && r.location == p.location)
                {
                    Some(slot) => *slot = p,
                    None => raw.push(p),
                }
            }
        }

        let template_params = template_params(path);
        let mut parameters = Vec::new();
        for p in raw {
            let location = match p.location {
                "path" => ParamLocation::Path,
                "query" => ParamLocation::Query,
                "header" => ParamLocation::Header,
                "cookie" => {
                    notes.push(Note::new(
                        LintRule::UnsupportedParameterLocation,
                        format!("cookie parameter `{}` is not generated", p.name),
                    ));
                    continue;
                }
                other => {
                    return Err(parse_err(format!(
                        "parameter `{}` of {key} has unknown location `{other}`",
                        p.name
                    )))
                }
            };
            if location == ParamLocation::Path && !template_params.iter().any(|t| t == p.name) {
                notes.push(Note::new(
                    LintRule::UnsupportedParameterLocation,
                    format!("path parameter `{}` does not appear in the path", p.name),
                ));
                continue;
            }
            let schema = match (p.value.get("schema"), p.value.get("content")) {
                (Some(schema), _) => self.schema(schema)?,
                (None, Some(content)) => match first_media_schema(content) {
                    Some(schema) => self.schema(schema)?,
                    None => SchemaNode::any(),
                },
                (None, None) => SchemaNode::any(),
            };
            let required = location == ParamLocation::Path
                || p.value.get("required").and_then(Value::as_bool).unwrap_or(false);
            parameters.push(ParameterDef {
                name: p.name.to_string(),
                location,
                schema,
                required,
            });
        }

        for name in &template_params {
            let declared = parameters
                .iter()
                .any(|p| p.location == ParamLocation::Path && &p.name == name);
            if !declared {
                notes.push(Note::new(
                    LintRule::UndeclaredPathParameter,
                    format!("path parameter `{name}` is not declared; treated as a string"),
                ));
                parameters.push(ParameterDef {
                    name: name.clone(),
                    location: ParamLocation::Path,
                    schema: SchemaNode::of(SchemaKind::String),
                    required: true,
                });
            }
        }
        parameters.sort_by_key(|p| p.location);

        let mut request_body_schema = None;
        if let Some(body) = op.get("requestBody") {
            let body = self.deref(body)?;
            if let Some(content) = body.get("content").and_then(Value::as_object) {
                let json = content.iter().find(|(m, _)| super::is_json_media_type(m));
                let chosen = json.or_else(|| content.iter().next());
                if let Some((media, media_obj)) = chosen {
                    if !super::is_json_media_type(media) {
                        notes.push(Note::new(
                            LintRule::UnsupportedParameterLocation,
                            format!("request body media type `{media}` is sent as JSON"),
                        ));
                    }
                    request_body_schema = Some(match media_obj.get("schema") {
                        Some(schema) => self.schema(schema)?,
                        None => SchemaNode::any(),
                    });
                }
            }
        }
        if let Some(body) = &request_body_schema {
            parameters.extend(body_parameters(body));
        }

        let mut responses = BTreeMap::new();
        let declared = op
            .get("responses")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err(format!("{key} has no `responses` mapping")))?;
        for (status, response) in declared {
            if status.starts_with("x-") {
                continue;
            }
            let pattern: StatusPattern = status
                .parse()
                .map_err(|e| parse_err(format!("{key}: {e}")))?;
            let response = self.deref(response)?;
            let mut media_types = Vec::new();
            let mut body_schema = None;
            if let Some(content) = response.get("content").and_then(Value::as_object) {
                for (media, media_obj) in content {
                    media_types.push(media.clone());
                    if body_schema.is_none() && super::is_json_media_type(media) {
                        if let Some(schema) = media_obj.get("schema") {
                            body_schema = Some(self.schema(schema)?);
                        }
                    }
                }
            }
            responses.insert(
                pattern,
                ResponseDef {
                    status_pattern: pattern,
                    media_types,
                    body_schema,
                },
            );
        }

        notes.extend(read_notes(op)?);
        notes.sort();
        notes.dedup();

        Ok(OperationDef {
            method,
            path_template: path.to_string(),
            operation_id: op
                .get("operationId")
                .and_then(Value::as_str)
                .map(str::to_string),
            parameters,
            request_body_schema,
            responses,
            notes,
        })
    }

    fn schema(&mut self, value: &'a Value) -> Result<SchemaNode, SpecError> {
        if let Some(reference) = value.get("$ref").and_then(Value::as_str) {
            if self.stack.iter().any(|r| r == reference) {
                let mut node = SchemaNode::any();
                node.notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    format!("recursive reference `{reference}` is not expanded"),
                ));
                return Ok(node);
            }
            let target = self.lookup(reference)?;
            self.stack.push(reference.to_string());
            let node = self.schema(target);
            self.stack.pop();
            return node;
        }
        let obj = match value {
            Value::Object(obj) => obj,
            Value::Bool(true) => return Ok(SchemaNode::any()),
            Value::Bool(false) => {
                let mut node = SchemaNode::any();
                node.notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    "`false` schema is treated as any",
                ));
                return Ok(node);
            }
            _ => return Err(parse_err("schema is not a mapping")),
        };

        let mut node = SchemaNode::any();
        let mut explicit_kind = false;
        match obj.get("type") {
            None => {}
            Some(Value::String(t)) => {
                if t == "null" {
                    node.nullable = true;
                } else {
                    node.kind = self.kind_of(t, &mut node.notes);
                    explicit_kind = true;
                }
            }
            Some(Value::Array(types)) => {
                let mut kinds = Vec::new();
                for t in types {
                    match t.as_str() {
                        Some("null") => node.nullable = true,
                        Some(t) => kinds.push(t),
                        None => return Err(parse_err("`type` list holds a non-string")),
                    }
                }
                match kinds.as_slice() {
                    [] => {}
                    [one] => {
                        node.kind = self.kind_of(one, &mut node.notes);
                        explicit_kind = true;
                    }
                    many => node.notes.push(Note::new(
                        LintRule::UnsupportedSchemaKeyword,
                        format!("multi-valued type {many:?} is treated as any"),
                    )),
                }
            }
            Some(_) => return Err(parse_err("`type` is neither a string nor a list")),
        }
        if obj.get("nullable").and_then(Value::as_bool) == Some(true) {
            node.nullable = true;
        }

        let c = &mut node.constraints;
        if let Some(values) = obj.get("enum") {
            c.enum_values = Some(
                values
                    .as_array()
                    .ok_or_else(|| parse_err("`enum` is not a list"))?
                    .clone(),
            );
        }
        if let Some(value) = obj.get("const") {
            c.enum_values = Some(vec![value.clone()]);
        }
        c.minimum = obj.get("minimum").and_then(Value::as_f64);
        c.maximum = obj.get("maximum").and_then(Value::as_f64);
        match obj.get("exclusiveMinimum") {
            Some(Value::Bool(b)) => c.exclusive_minimum = *b,
            Some(Value::Number(n)) => {
                let n = n.as_f64().unwrap_or(f64::NEG_INFINITY);
                if c.minimum.is_none_or(|m| n >= m) {
                    c.minimum = Some(n);
                    c.exclusive_minimum = true;
                }
            }
            _ => {}
        }
        match obj.get("exclusiveMaximum") {
            Some(Value::Bool(b)) => c.exclusive_maximum = *b,
            Some(Value::Number(n)) => {
                let n = n.as_f64().unwrap_or(f64::INFINITY);
                if c.maximum.is_none_or(|m| n <= m) {
                    c.maximum = Some(n);
                    c.exclusive_maximum = true;
                }
            }
            _ => {}
        }
        c.min_length = obj.get("minLength").and_then(Value::as_u64);
        c.max_length = obj.get("maxLength").and_then(Value::as_u64);
        c.min_items = obj.get("minItems").and_then(Value::as_u64);
        c.max_items = obj.get("maxItems").and_then(Value::as_u64);
        c.format = obj.get("format").and_then(Value::as_str).map(str::to_string);
        if let Some(pattern) = obj.get("pattern").and_then(Value::as_str) {
            if regex::Regex::new(pattern).is_ok() {
                c.pattern = Some(pattern.to_string());
            } else {
                node.notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    format!("pattern `{pattern}` is not a supported regular expression"),
                ));
            }
        }
        let c = &mut node.constraints;
        if let Some(required) = obj.get("required") {
            c.required = required
                .as_array()
                .ok_or_else(|| parse_err("`required` is not a list"))?
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| parse_err("`required` holds a non-string"))
                })
                .collect::<Result<_, _>>()?;
        }
        let mut shape_hint = None;
        if let Some(props) = obj.get("properties") {
            let props = props
                .as_object()
                .ok_or_else(|| parse_err("`properties` is not a mapping"))?;
            for (name, schema) in props {
                let child = self.schema(schema)?;
                node.constraints.properties.insert(name.clone(), child);
            }
            shape_hint = Some(SchemaKind::Object);
        }
        match obj.get("additionalProperties") {
            Some(Value::Bool(b)) => node.constraints.additional_properties = *b,
            Some(Value::Object(extra)) if !extra.is_empty() => node.notes.push(Note::new(
                LintRule::UnsupportedSchemaKeyword,
                "additionalProperties schema is not checked",
            )),
            _ => {}
        }
        if let Some(items) = obj.get("items") {
            node.constraints.items = Some(Box::new(self.schema(items)?));
            shape_hint.get_or_insert(SchemaKind::Array);
        }
        if !explicit_kind {
            if let Some(kind) = shape_hint {
                node.kind = kind;
            }
        }

        for (key, _) in obj {
            if !HANDLED.contains(&key.as_str())
                && !ANNOTATIONS.contains(&key.as_str())
                && !key.starts_with("x-")
            {
                node.notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    format!("keyword `{key}` is ignored"),
                ));
            }
        }

        if let Some(branches) = obj.get("allOf") {
            let branches = branches
                .as_array()
                .ok_or_else(|| parse_err("`allOf` is not a list"))?;
            for branch in branches {
                let branch = self.schema(branch)?;
                node = merge(node, branch);
            }
        }
        for keyword in ["oneOf", "anyOf"] {
            let Some(branches) = obj.get(keyword) else {
                continue;
            };
            let branches = branches
                .as_array()
                .ok_or_else(|| parse_err(format!("`{keyword}` is not a list")))?;
            let mut nullable = false;
            let mut kept = Vec::new();
            for branch in branches {
                let branch = self.schema(branch)?;
                if is_null_only(&branch) {
                    nullable = true;
                } else {
                    kept.push(branch);
                }
            }
            if kept.len() <= 1 {
                if let Some(branch) = kept.pop() {
                    node = merge(node, branch);
                }
                node.nullable |= nullable;
            } else {
                let mut notes = std::mem::take(&mut node.notes);
                notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    format!("`{keyword}` with {} branches is treated as any", kept.len()),
                ));
                node = SchemaNode {
                    notes,
                    ..SchemaNode::any()
                };
            }
        }

        if node.kind == SchemaKind::Object {
            for name in node.constraints.required.clone() {
                node.constraints
                    .properties
                    .entry(name)
                    .or_insert_with(SchemaNode::any);
            }
        }
        node.notes.extend(read_notes(value)?);
        node.notes.dedup();
        Ok(node)
    }

    fn kind_of(&self, name: &str, notes: &mut Vec<Note>) -> SchemaKind {
        match name {
            "object" => SchemaKind::Object,
            "array" => SchemaKind::Array,
            "string" => SchemaKind::String,
            "integer" => SchemaKind::Integer,
            "number" => SchemaKind::Number,
            "boolean" => SchemaKind::Boolean,
            other => {
                notes.push(Note::new(
                    LintRule::UnsupportedSchemaKeyword,
                    format!("type `{other}` is treated as any"),
                ));
                SchemaKind::Any
            }
        }
    }
}

#[derive(Clone)]
struct RawParam<'a> {
    name: &'a str,
    location: &'a str,
    value: &'a Value,
}

fn read_notes(value: &Value) -> Result<Vec<Note>, SpecError> {
    match value.get(NOTES_KEY) {
        None => Ok(Vec::new()),
        Some(notes) => serde_json::from_value(notes.clone())
            .map_err(|e| parse_err(format!("malformed `{NOTES_KEY}`: {e}"))),
    }
}

fn is_null_only(node: &SchemaNode) -> bool {
    node.kind == SchemaKind::Any && node.nullable && node.constraints == Constraints::default()
}

fn first_media_schema(content: &Value) -> Option<&Value> {
    content
        .as_object()?
        .values()
        .find_map(|media| media.get("schema"))
}

fn escape_pointer(segment: &str) -> String {
    segment.replace('~', "~0").replace('/', "~1")
}

/// Path component of a server URL, without a trailing slash.
fn server_path(url: &str) -> String {
    let path = match url.find("://") {
        Some(i) => match url[i + 3..].find('/') {
            Some(j) => &url[i + 3 + j..],
            None => "",
        },
        None => url,
    };
    path.trim_end_matches('/').to_string()
}

/// Names of `{param}` placeholders in a template, in order.
pub(crate) fn template_params(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        let name = &rest[start + 1..start + len];
        if !name.is_empty() && !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
        rest = &rest[start + len + 1..];
    }
    out
}

/// Parameters contributed by a request body: one per top-level property of
/// an object body, or a single whole-body parameter otherwise.
pub(crate) fn body_parameters(body: &SchemaNode) -> Vec<ParameterDef> {
    if body.kind == SchemaKind::Object {
        body.constraints
            .properties
            .iter()
            .map(|(name, schema)| ParameterDef {
                name: name.clone(),
                location: ParamLocation::BodyField,
                schema: schema.clone(),
                required: body.constraints.required.contains(name),
            })
            .collect()
    } else {
        vec![ParameterDef {
            name: WHOLE_BODY_PARAM.to_string(),
            location: ParamLocation::BodyField,
            schema: body.clone(),
            required: true,
        }]
    }
}

fn tighter_min(a: (Option<f64>, bool), b: (Option<f64>, bool)) -> (Option<f64>, bool) {
    match (a.0, b.0) {
        (Some(x), Some(y)) if y > x || (y == x && b.1) => b,
        (Some(_), _) => a,
        (None, _) => b,
    }
}

fn tighter_max(a: (Option<f64>, bool), b: (Option<f64>, bool)) -> (Option<f64>, bool) {
    match (a.0, b.0) {
        (Some(x), Some(y)) if y < x || (y == x && b.1) => b,
        (Some(_), _) => a,
        (None, _) => b,
    }
}

/// Conjunction of two schemas, as used for `allOf`.
fn merge(a: SchemaNode, b: SchemaNode) -> SchemaNode {
    let mut notes = a.notes;
    notes.extend(b.notes);
    let kind = match (a.kind, b.kind) {
        (SchemaKind::Any, k) | (k, SchemaKind::Any) => k,
        (x, y) if x == y => x,
        (SchemaKind::Integer, SchemaKind::Number) | (SchemaKind::Number, SchemaKind::Integer) => {
            SchemaKind::Integer
        }
        (x, y) => {
            notes.push(Note::new(
                LintRule::UnsupportedSchemaKeyword,
                format!(
                    "`allOf` combines {} and {}; treated as any",
                    x.as_str(),
                    y.as_str()
                ),
            ));
            return SchemaNode {
                notes,
                ..SchemaNode::any()
            };
        }
    };
    let nullable =
        (a.kind == SchemaKind::Any || a.nullable) && (b.kind == SchemaKind::Any || b.nullable);
    let (ca, cb) = (a.constraints, b.constraints);
    let enum_values = match (ca.enum_values, cb.enum_values) {
        (Some(x), Some(y)) => Some(x.into_iter().filter(|v| y.contains(v)).collect()),
        (x, y) => x.or(y),
    };
    let (minimum, exclusive_minimum) =
        tighter_min((ca.minimum, ca.exclusive_minimum), (cb.minimum, cb.exclusive_minimum));
    let (maximum, exclusive_maximum) =
        tighter_max((ca.maximum, ca.exclusive_maximum), (cb.maximum, cb.exclusive_maximum));
    if ca.pattern.is_some() && cb.pattern.is_some() && ca.pattern != cb.pattern {
        notes.push(Note::new(
            LintRule::UnsupportedSchemaKeyword,
            "only the first of several `allOf` patterns is checked",
        ));
    }
    let mut required = ca.required;
    for name in cb.required {
        if !required.contains(&name) {
            required.push(name);
        }
    }
    let mut properties = ca.properties;
    for (name, schema) in cb.properties {
        let merged = match properties.remove(&name) {
            Some(existing) => merge(existing, schema),
            None => schema,
        };
        properties.insert(name, merged);
    }
    let items = match (ca.items, cb.items) {
        (Some(x), Some(y)) => Some(Box::new(merge(*x, *y))),
        (x, y) => x.or(y),
    };
    let max_opt = |x: Option<u64>, y: Option<u64>| x.max(y);
    let min_opt = |x: Option<u64>, y: Option<u64>| match (x, y) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    };
    SchemaNode {
        kind,
        nullable,
        constraints: Constraints {
            enum_values,
            minimum,
            maximum,
            exclusive_minimum,
            exclusive_maximum,
            min_length: max_opt(ca.min_length, cb.min_length),
            max_length: min_opt(ca.max_length, cb.max_length),
            pattern: ca.pattern.or(cb.pattern),
            format: ca.format.or(cb.format),
            required,
            properties,
            additional_properties: ca.additional_properties && cb.additional_properties,
            items,
            min_items: max_opt(ca.min_items, cb.min_items),
            max_items: min_opt(ca.max_items, cb.max_items),
        },
        notes,
    }
}
