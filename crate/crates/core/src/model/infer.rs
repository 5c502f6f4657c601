use std::collections::{BTreeMap, BTreeSet};

use super::{
    find_cycle, CrudKind, DependencyEdge, OperationBinding, Provenance, Resource, SemanticModel,
};
use crate::names::{match_names, qualify, resource_name, DEFAULT_THRESHOLD};
use crate::spec::{
    qualified_path_param, resource_of_path, ApiSpecIR, LintFinding, LintRule, Method,
    OperationDef, ParamLocation, SchemaKind, SchemaNode, Segment, WHOLE_BODY_PARAM,
};

/// Resource name used for operations whose path has no literal segment.
pub const ROOT_RESOURCE: &str = "root";

#[derive(Debug, Clone, Copy)]
pub struct InferOptions {
    /// Minimum name-match score for id fields and dependency edges.
    pub threshold: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub model: SemanticModel,
    /// Cycle-breaking reports.
    pub warnings: Vec<LintFinding>,
}

/// Infers a model with the default threshold.
pub fn infer_model(spec: &ApiSpecIR) -> SemanticModel {
    infer_model_with(spec, InferOptions::default()).model
}

pub fn infer_model_with(spec: &ApiSpecIR, options: InferOptions) -> Inference {
    let threshold = options.threshold;
    let bindings: Vec<OperationBinding> = spec
        .operations
        .iter()
        .map(|op| OperationBinding {
            operation: op.key(),
            resource: resource_for(op),
            crud_kind: classify(op),
            provenance: Provenance::Inferred,
        })
        .collect();

    let names: BTreeSet<&str> = bindings.iter().map(|b| b.resource.as_str()).collect();
    let resources: Vec<Resource> = names
        .iter()
        .map(|name| derive_resource(spec, &bindings, name, threshold))
        .collect();

    let mut edges: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for (op, binding) in spec.operations.iter().zip(&bindings) {
        let dependent = &binding.resource;
        let own = resources
            .iter()
            .find(|r| &r.name == dependent)
            .expect("every bound resource is derived");
        for param in &op.parameters {
            if param.name == WHOLE_BODY_PARAM || is_own_id(op, &param.name, own, threshold) {
                continue;
            }
            let wanted = input_name(op, &param.name);
            for other in resources.iter().filter(|r| &r.name != dependent) {
                let score = id_match(&wanted, other);
                if score >= threshold {
                    let slot = edges
                        .entry((dependent.clone(), other.name.clone(), param.name.clone()))
                        .or_insert(0.0);
                    *slot = slot.max(score);
                }
            }
        }
    }
    let mut edges: Vec<DependencyEdge> = edges
        .into_iter()
        .map(|((dependent, prerequisite, via_parameter), confidence)| DependencyEdge {
            dependent,
            prerequisite,
            via_parameter,
            confidence,
            provenance: Provenance::Inferred,
        })
        .collect();

    let mut warnings = Vec::new();
    while let Some(cycle) = find_cycle(&edges) {
        let weakest = *cycle
            .iter()
            .min_by(|&&a, &&b| {
                edges[a]
                    .confidence
                    .total_cmp(&edges[b].confidence)
                    .then_with(|| edges[b].key().cmp(&edges[a].key()))
            })
            .expect("cycles are nonempty");
        let dropped = edges.remove(weakest);
        warnings.push(LintFinding::new(
            LintRule::DependencyCycleBroken,
            "model",
            format!(
                "dropped edge {} -> {} via `{}` (confidence {:.2}) to break a cycle",
                dropped.dependent, dropped.prerequisite, dropped.via_parameter, dropped.confidence
            ),
        ));
    }

    Inference {
        model: SemanticModel {
            resources,
            bindings,
            edges,
        },
        warnings,
    }
}

pub(super) fn resource_for(op: &OperationDef) -> String {
    resource_of_path(&op.path_template).unwrap_or_else(|| ROOT_RESOURCE.to_string())
}

/// Assigns a CRUD role from method and path shape.
pub fn classify(op: &OperationDef) -> CrudKind {
    match (op.method, op.is_item_path()) {
        (Method::Post, false) => CrudKind::Create,
        (Method::Get, true) => CrudKind::Read,
        (Method::Get, false) => CrudKind::ReadList,
        (Method::Put | Method::Patch, true) => CrudKind::Update,
        (Method::Delete, true) => CrudKind::Delete,
        _ => CrudKind::Other,
    }
}

/// Name of an input as matched against id fields: path parameters are
/// qualified by the collection they index.
pub(crate) fn input_name(op: &OperationDef, param: &str) -> String {
    match op.param(param).map(|p| p.location) {
        Some(ParamLocation::Path) => qualified_path_param(&op.path_template, param),
        _ => param.to_string(),
    }
}

/// Best score of `name` against a resource's id fields, each qualified by
/// the resource so that a bare `id` reads as `<resource> id`.
pub(crate) fn id_match(name: &str, resource: &Resource) -> f64 {
    resource
        .id_field_names
        .iter()
        .map(|f| match_names(name, &qualify(f, &resource.name)))
        .fold(0.0, f64::max)
}

/// True when `param` names the identifier of the operation's own resource:
/// the trailing path parameter of an item path, or any input matching one
/// of the resource's id fields.
fn is_own_id(op: &OperationDef, param: &str, own: &Resource, threshold: f64) -> bool {
    let trailing = matches!(
        crate::spec::path_segments(&op.path_template).last(),
        Some(Segment::Param(p)) if *p == param
    );
    trailing || id_match(&input_name(op, param), own) >= threshold
}

pub(super) fn derive_resource(
    spec: &ApiSpecIR,
    bindings: &[OperationBinding],
    name: &str,
    threshold: f64,
) -> Resource {
    let schema = resource_schema(spec, bindings, name);
    let own_id = format!("{name} id");
    let mut ids: Vec<String> = Vec::new();
    if let Some(schema) = &schema {
        for field in schema.constraints.properties.keys() {
            if match_names(&qualify(field, name), &own_id) >= threshold {
                ids.push(field.clone());
            }
        }
    }
    for (op, binding) in spec.operations.iter().zip(bindings) {
        if binding.resource != name {
            continue;
        }
        if let Some(Segment::Param(p)) = crate::spec::path_segments(&op.path_template).last() {
            ids.push(p.to_string());
        }
    }
    ids.sort();
    ids.dedup();
    Resource {
        name: name.to_string(),
        id_field_names: ids,
        schema,
        provenance: Provenance::Inferred,
    }
}

/// The named component schema for the resource, else the object returned
/// by its create or read operation.
pub(super) fn resource_schema(
    spec: &ApiSpecIR,
    bindings: &[OperationBinding],
    name: &str,
) -> Option<SchemaNode> {
    let named = spec
        .schemas
        .iter()
        .find(|(schema_name, node)| {
            resource_name(schema_name) == name && node.kind == SchemaKind::Object
        })
        .map(|(_, node)| node.clone());
    if named.is_some() {
        return named;
    }
    for wanted in [CrudKind::Create, CrudKind::Read] {
        for (op, binding) in spec.operations.iter().zip(bindings) {
            if binding.resource == name && binding.crud_kind == wanted {
                if let Some(schema) = op
                    .success_schemas()
                    .find(|s| s.kind == SchemaKind::Object)
                {
                    return Some(schema.clone());
                }
            }
        }
    }
    None
}
