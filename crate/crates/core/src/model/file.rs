//! The human-editable model file and the overrides file.
//!
//! The model file is JSON with the top-level keys `model_version`,
//! `resources`, `bindings` and `edges`. Resource schemas are not stored;
//! they are re-derived from the specification on load. Each element's
//! `provenance` is recomputed on load by comparing it with what inference
//! produces, so hand-edited elements come back as `user-edited`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::infer::{infer_model, resource_schema};
use super::{
    find_cycle, CrudKind, DependencyEdge, ModelError, OperationBinding, Provenance, Resource,
    SemanticModel,
};
use crate::names::resource_name;
use crate::spec::ApiSpecIR;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    model_version: u32,
    resources: Vec<ResourceEntry>,
    bindings: Vec<OperationBinding>,
    edges: Vec<DependencyEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceEntry {
    pub name: String,
    pub id_field_names: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

/// Edits applied on top of an inferred model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    /// Added resources, or replacements by name.
    pub resources: Vec<ResourceEntry>,
    pub bindings: Vec<BindingOverride>,
    pub edges: Vec<EdgeOverride>,
    pub remove_edges: Vec<EdgeRemoval>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingOverride {
    pub operation: String,
    #[serde(default)]
    pub resource: Option<String>,
    #[serde(default)]
    pub crud_kind: Option<CrudKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeOverride {
    pub dependent: String,
    pub prerequisite: String,
    pub via_parameter: String,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

/// Removes edges between two resources; all of them unless
/// `via_parameter` narrows it to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRemoval {
    pub dependent: String,
    pub prerequisite: String,
    #[serde(default)]
    pub via_parameter: Option<String>,
}

/// Canonical encoding: fixed key order, sorted elements, trailing newline.
pub fn serialize_model(model: &SemanticModel) -> Vec<u8> {
    let file = to_file(model);
    let mut out = serde_json::to_vec_pretty(&file).expect("model serializes");
    out.push(b'\n');
    out
}

fn to_file(model: &SemanticModel) -> ModelFile {
    let mut resources: Vec<ResourceEntry> = model
        .resources
        .iter()
        .map(|r| ResourceEntry {
            name: r.name.clone(),
            id_field_names: r.id_field_names.clone(),
            provenance: r.provenance,
        })
        .collect();
    resources.sort_by(|a, b| a.name.cmp(&b.name));
    let mut edges = model.edges.clone();
    edges.sort_by(|a, b| a.key().cmp(&b.key()));
    ModelFile {
        model_version: MODEL_VERSION,
        resources,
        bindings: model.bindings.clone(),
        edges,
    }
}

/// Reads a model file and validates it against the specification.
pub fn load_model(document: &[u8], spec: &ApiSpecIR) -> Result<SemanticModel, ModelError> {
    let file: ModelFile =
        serde_json::from_slice(document).map_err(|e| ModelError::Schema(e.to_string()))?;
    if file.model_version != MODEL_VERSION {
        return Err(ModelError::Schema(format!(
            "model_version {} is not supported (expected {MODEL_VERSION})",
            file.model_version
        )));
    }
    reconcile(file, spec, &infer_model(spec))
}

/// Applies an overrides document to `base`. Changed or added elements are
/// marked user-edited; the rest keep their provenance.
pub fn apply_overrides(
    base: &SemanticModel,
    overrides: &ModelOverrides,
    spec: &ApiSpecIR,
) -> Result<SemanticModel, ModelError> {
    let mut file = to_file(base);
    for entry in &overrides.resources {
        match file.resources.iter_mut().find(|r| r.name == entry.name) {
            Some(slot) => *slot = entry.clone(),
            None => file.resources.push(entry.clone()),
        }
    }
    for edit in &overrides.bindings {
        let binding = file
            .bindings
            .iter_mut()
            .find(|b| b.operation == edit.operation)
            .ok_or_else(|| ModelError::DanglingReference(format!("operation `{}`", edit.operation)))?;
        if let Some(resource) = &edit.resource {
            binding.resource = resource.clone();
        }
        if let Some(kind) = edit.crud_kind {
            binding.crud_kind = kind;
        }
    }
    for removal in &overrides.remove_edges {
        file.edges.retain(|e| {
            !(e.dependent == removal.dependent
                && e.prerequisite == removal.prerequisite
                && removal.via_parameter.as_ref().is_none_or(|v| *v == e.via_parameter))
        });
    }
    for add in &overrides.edges {
        let edge = DependencyEdge {
            dependent: add.dependent.clone(),
            prerequisite: add.prerequisite.clone(),
            via_parameter: add.via_parameter.clone(),
            confidence: add.confidence,
            provenance: Provenance::UserEdited,
        };
        match file.edges.iter_mut().find(|e| e.key() == edge.key()) {
            Some(slot) => *slot = edge,
            None => file.edges.push(edge),
        }
    }
    reconcile(file, spec, base)
}

/// Validates a model file and fills what it omits from `reference`.
fn reconcile(
    file: ModelFile,
    spec: &ApiSpecIR,
    reference: &SemanticModel,
) -> Result<SemanticModel, ModelError> {
    let mut resources: BTreeMap<String, ResourceEntry> = BTreeMap::new();
    for entry in file.resources {
        if entry.name.is_empty() || resource_name(&entry.name) != entry.name {
            return Err(ModelError::Schema(format!(
                "resource name `{}` is not a lowercase singular noun",
                entry.name
            )));
        }
        if resources.contains_key(&entry.name) {
            return Err(ModelError::Schema(format!("resource `{}` is listed twice", entry.name)));
        }
        resources.insert(entry.name.clone(), entry);
    }

    let mut by_op: BTreeMap<String, OperationBinding> = BTreeMap::new();
    for binding in file.bindings {
        if spec.operation(&binding.operation).is_none() {
            return Err(ModelError::DanglingReference(format!(
                "operation `{}`",
                binding.operation
            )));
        }
        if !resources.contains_key(&binding.resource) {
            return Err(ModelError::DanglingReference(format!(
                "resource `{}` (bound to `{}`)",
                binding.resource, binding.operation
            )));
        }
        if by_op.contains_key(&binding.operation) {
            return Err(ModelError::Schema(format!(
                "operation `{}` is bound twice",
                binding.operation
            )));
        }
        by_op.insert(binding.operation.clone(), binding);
    }

    let mut bindings = Vec::with_capacity(spec.operations.len());
    for op in &spec.operations {
        let key = op.key();
        let binding = match by_op.remove(&key) {
            Some(mut b) => {
                b.provenance = match reference.binding(&key) {
                    Some(r) if r.resource == b.resource && r.crud_kind == b.crud_kind => r.provenance,
                    _ => Provenance::UserEdited,
                };
                b
            }
            None => {
                let inferred = reference
                    .binding(&key)
                    .cloned()
                    .or_else(|| infer_model(spec).binding(&key).cloned())
                    .expect("inference binds every operation");
                if !resources.contains_key(&inferred.resource) {
                    let source = reference
                        .resource(&inferred.resource)
                        .map(|r| r.id_field_names.clone())
                        .unwrap_or_default();
                    resources.insert(
                        inferred.resource.clone(),
                        ResourceEntry {
                            name: inferred.resource.clone(),
                            id_field_names: source,
                            provenance: Provenance::Inferred,
                        },
                    );
                }
                inferred
            }
        };
        bindings.push(binding);
    }

    let mut edges: Vec<DependencyEdge> = Vec::new();
    let mut seen = BTreeSet::new();
    for mut edge in file.edges {
        for end in [&edge.dependent, &edge.prerequisite] {
            if !resources.contains_key(end) {
                return Err(ModelError::DanglingReference(format!("resource `{end}` in an edge")));
            }
        }
        if edge.dependent == edge.prerequisite {
            return Err(ModelError::Schema(format!(
                "edge on `{}` points at itself",
                edge.dependent
            )));
        }
        if !(0.0..=1.0).contains(&edge.confidence) {
            return Err(ModelError::Schema(format!(
                "edge confidence {} is outside [0, 1]",
                edge.confidence
            )));
        }
        let key = (
            edge.dependent.clone(),
            edge.prerequisite.clone(),
            edge.via_parameter.clone(),
        );
        if !seen.insert(key) {
            return Err(ModelError::Schema(format!(
                "edge {} -> {} via `{}` is listed twice",
                edge.dependent, edge.prerequisite, edge.via_parameter
            )));
        }
        edge.provenance = match reference.edges.iter().find(|r| r.key() == edge.key()) {
            Some(r) if (r.confidence - edge.confidence).abs() < 1e-9 => r.provenance,
            _ => Provenance::UserEdited,
        };
        edges.push(edge);
    }
    edges.sort_by(|a, b| a.key().cmp(&b.key()));
    if let Some(cycle) = find_cycle(&edges) {
        let described: Vec<String> = cycle
            .iter()
            .map(|&i| format!("{} -> {}", edges[i].dependent, edges[i].prerequisite))
            .collect();
        return Err(ModelError::Schema(format!(
            "edges form a cycle: {}",
            described.join(", ")
        )));
    }

    let resources = resources
        .into_values()
        .map(|entry| {
            let provenance = match reference.resource(&entry.name) {
                Some(r) if r.id_field_names == entry.id_field_names => r.provenance,
                _ => Provenance::UserEdited,
            };
            Resource {
                schema: resource_schema(spec, &bindings, &entry.name),
                name: entry.name,
                id_field_names: entry.id_field_names,
                provenance,
            }
        })
        .collect();

    Ok(SemanticModel {
        resources,
        bindings,
        edges,
    })
}
