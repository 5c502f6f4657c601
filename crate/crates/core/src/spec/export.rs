use serde_json::{json, Map, Value};

use super::load::NOTES_KEY;
use super::{ApiSpecIR, Note, OperationDef, ParamLocation, SchemaKind, SchemaNode};

/// Writes the IR as a self-contained OpenAPI 3.0 document with every schema
/// inlined. Loading the result yields an IR equal to the input.
pub fn export_spec(ir: &ApiSpecIR) -> Value {
    let mut doc = Map::new();
    doc.insert("openapi".into(), json!("3.0.3"));
    doc.insert("info".into(), json!({ "title": ir.title, "version": "1" }));
    if !ir.base_paths.is_empty() {
        let servers: Vec<Value> = ir.base_paths.iter().map(|p| json!({ "url": p })).collect();
        doc.insert("servers".into(), Value::Array(servers));
    }
    let mut paths = Map::new();
    for op in &ir.operations {
        let item = paths
            .entry(op.path_template.clone())
            .or_insert_with(|| Value::Object(Map::new()));
        item.as_object_mut()
            .expect("path item is an object")
            .insert(op.method.lower().to_string(), operation_json(op));
    }
    doc.insert("paths".into(), Value::Object(paths));
    if !ir.schemas.is_empty() {
        let schemas: Map<String, Value> = ir
            .schemas
            .iter()
            .map(|(name, node)| (name.clone(), schema_json(node)))
            .collect();
        doc.insert("components".into(), json!({ "schemas": schemas }));
    }
    Value::Object(doc)
}

/// [`export_spec`] rendered as pretty-printed JSON.
pub fn export_spec_bytes(ir: &ApiSpecIR) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&export_spec(ir)).expect("JSON values serialize");
    out.push(b'\n');
    out
}

fn operation_json(op: &OperationDef) -> Value {
    let mut obj = Map::new();
    if let Some(id) = &op.operation_id {
        obj.insert("operationId".into(), json!(id));
    }
    let params: Vec<Value> = op
        .parameters
        .iter()
        .filter(|p| p.location != ParamLocation::BodyField)
        .map(|p| {
            json!({
                "name": p.name,
                "in": p.location.as_str(),
                "required": p.required,
                "schema": schema_json(&p.schema),
            })
        })
        .collect();
    if !params.is_empty() {
        obj.insert("parameters".into(), Value::Array(params));
    }
    if let Some(body) = &op.request_body_schema {
        obj.insert(
            "requestBody".into(),
            json!({
                "required": true,
                "content": { "application/json": { "schema": schema_json(body) } },
            }),
        );
    }
    let mut responses = Map::new();
    for (pattern, response) in &op.responses {
        let mut content = Map::new();
        let mut schema_placed = false;
        for media in &response.media_types {
            let mut media_obj = Map::new();
            if !schema_placed && super::is_json_media_type(media) {
                if let Some(schema) = &response.body_schema {
                    media_obj.insert("schema".into(), schema_json(schema));
                    schema_placed = true;
                }
            }
            content.insert(media.clone(), Value::Object(media_obj));
        }
        let mut r = Map::new();
        r.insert("description".into(), json!(""));
        if !content.is_empty() {
            r.insert("content".into(), Value::Object(content));
        }
        responses.insert(pattern.to_string(), Value::Object(r));
    }
    obj.insert("responses".into(), Value::Object(responses));
    insert_notes(&mut obj, &op.notes);
    Value::Object(obj)
}

fn number(n: f64) -> Value {
    if n.fract() == 0.0 && n.abs() < 9.0e15 {
        json!(n as i64)
    } else {
        json!(n)
    }
}

fn insert_notes(obj: &mut Map<String, Value>, notes: &[Note]) {
    if !notes.is_empty() {
        obj.insert(
            NOTES_KEY.into(),
            serde_json::to_value(notes).expect("notes serialize"),
        );
    }
}

/// One schema node as an inlined OpenAPI 3.0 schema object.
pub(crate) fn schema_json(node: &SchemaNode) -> Value {
    let mut obj = Map::new();
    let c = &node.constraints;
    if node.kind != SchemaKind::Any {
        obj.insert("type".into(), json!(node.kind.as_str()));
    }
    if node.nullable {
        obj.insert("nullable".into(), json!(true));
    }
    if let Some(values) = &c.enum_values {
        obj.insert("enum".into(), Value::Array(values.clone()));
    }
    if let Some(min) = c.minimum {
        obj.insert("minimum".into(), number(min));
    }
    if c.exclusive_minimum {
        obj.insert("exclusiveMinimum".into(), json!(true));
    }
    if let Some(max) = c.maximum {
        obj.insert("maximum".into(), number(max));
    }
    if c.exclusive_maximum {
        obj.insert("exclusiveMaximum".into(), json!(true));
    }
    if let Some(n) = c.min_length {
        obj.insert("minLength".into(), json!(n));
    }
    if let Some(n) = c.max_length {
        obj.insert("maxLength".into(), json!(n));
    }
    if let Some(p) = &c.pattern {
        obj.insert("pattern".into(), json!(p));
    }
    if let Some(f) = &c.format {
        obj.insert("format".into(), json!(f));
    }
    if !c.required.is_empty() {
        obj.insert("required".into(), json!(c.required));
    }
    if !c.properties.is_empty() {
        let props: Map<String, Value> = c
            .properties
            .iter()
            .map(|(k, v)| (k.clone(), schema_json(v)))
            .collect();
        obj.insert("properties".into(), Value::Object(props));
    }
    if !c.additional_properties {
        obj.insert("additionalProperties".into(), json!(false));
    }
    if let Some(items) = &c.items {
        obj.insert("items".into(), schema_json(items));
    }
    if let Some(n) = c.min_items {
        obj.insert("minItems".into(), json!(n));
    }
    if let Some(n) = c.max_items {
        obj.insert("maxItems".into(), json!(n));
    }
    insert_notes(&mut obj, &node.notes);
    Value::Object(obj)
}
