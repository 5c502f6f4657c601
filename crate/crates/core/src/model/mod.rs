//! Resource-centric view of an API: which resources exist, which operation
//! acts on which resource and how, and which resources must exist before
//! another can be created.

mod file;
mod infer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::spec::SchemaNode;

pub use file::{
    apply_overrides, load_model, serialize_model, BindingOverride, EdgeOverride, EdgeRemoval,
    ModelOverrides, ResourceEntry, MODEL_VERSION,
};
pub use infer::{classify, infer_model, infer_model_with, InferOptions, Inference, ROOT_RESOURCE};
pub(crate) use infer::{id_match, input_name};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model file does not match the model schema: {0}")]
    Schema(String),
    #[error("model refers to {0}, which the specification does not define")]
    DanglingReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrudKind {
    Create,
    Read,
    ReadList,
    Update,
    Delete,
    Other,
}

impl CrudKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CrudKind::Create => "create",
            CrudKind::Read => "read",
            CrudKind::ReadList => "read-list",
            CrudKind::Update => "update",
            CrudKind::Delete => "delete",
            CrudKind::Other => "other",
        }
    }
}

impl fmt::Display for CrudKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Inferred,
    UserEdited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    /// Lowercase singular noun, words joined by `_`.
    pub name: String,
    /// Fields and path parameters that carry this resource's identifier.
    pub id_field_names: Vec<String>,
    /// Representation returned for one instance, when known.
    pub schema: Option<SchemaNode>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationBinding {
    /// Operation key, e.g. `GET /books/{bookId}`.
    pub operation: String,
    pub resource: String,
    pub crud_kind: CrudKind,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyEdge {
    pub dependent: String,
    pub prerequisite: String,
    pub via_parameter: String,
    pub confidence: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl DependencyEdge {
    fn key(&self) -> (&str, &str, &str) {
        (&self.dependent, &self.prerequisite, &self.via_parameter)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticModel {
    /// Sorted by name.
    pub resources: Vec<Resource>,
    /// One per specification operation, in specification order.
    pub bindings: Vec<OperationBinding>,
    /// Sorted by (dependent, prerequisite, via_parameter).
    pub edges: Vec<DependencyEdge>,
}

impl SemanticModel {
    pub fn resource(&self, name: &str) -> Option<&Resource> {
        self.resources.iter().find(|r| r.name == name)
    }

    pub fn binding(&self, operation: &str) -> Option<&OperationBinding> {
        self.bindings.iter().find(|b| b.operation == operation)
    }

    pub fn bindings_of<'a>(&'a self, resource: &'a str) -> impl Iterator<Item = &'a OperationBinding> {
        self.bindings.iter().filter(move |b| b.resource == resource)
    }

    /// Edges whose dependent is `resource` and that arrive through `param`.
    pub fn edges_via<'a>(
        &'a self,
        resource: &'a str,
        param: &'a str,
    ) -> impl Iterator<Item = &'a DependencyEdge> {
        self.edges
            .iter()
            .filter(move |e| e.dependent == resource && e.via_parameter == param)
    }

    /// Resource names with every prerequisite before its dependents; ties
    /// broken by name.
    pub fn topological_order(&self) -> Vec<String> {
        let mut pending: BTreeMap<&str, BTreeSet<&str>> = self
            .resources
            .iter()
            .map(|r| (r.name.as_str(), BTreeSet::new()))
            .collect();
        for e in &self.edges {
            if let Some(deps) = pending.get_mut(e.dependent.as_str()) {
                deps.insert(e.prerequisite.as_str());
            }
        }
        let mut order = Vec::new();
        while !pending.is_empty() {
            let ready: Vec<&str> = pending
                .iter()
                .filter(|(_, deps)| deps.iter().all(|d| !pending.contains_key(d)))
                .map(|(name, _)| *name)
                .collect();
            let batch = if ready.is_empty() {
                vec![*pending.keys().next().expect("nonempty")]
            } else {
                ready
            };
            for name in batch {
                pending.remove(name);
                order.push(name.to_string());
            }
        }
        order
    }

    /// A directed cycle among the edges, as edge indices, if any.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        find_cycle(&self.edges)
    }
}

fn find_cycle(edges: &[DependencyEdge]) -> Option<Vec<usize>> {
    let nodes: BTreeSet<&str> = edges
        .iter()
        .flat_map(|e| [e.dependent.as_str(), e.prerequisite.as_str()])
        .collect();
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = nodes.iter().map(|n| (*n, Mark::New)).collect();

    fn visit<'a>(
        node: &'a str,
        edges: &'a [DependencyEdge],
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        marks.insert(node, Mark::Active);
        for (i, e) in edges.iter().enumerate().filter(|(_, e)| e.dependent == node) {
            let next = e.prerequisite.as_str();
            match marks[next] {
                Mark::Active => {
                    path.push(i);
                    let start = path
                        .iter()
                        .position(|&j| edges[j].dependent == next)
                        .expect("cycle start is on the path");
                    return Some(path[start..].to_vec());
                }
                Mark::New => {
                    path.push(i);
                    if let Some(cycle) = visit(next, edges, marks, path) {
                        return Some(cycle);
                    }
                    path.pop();
                }
                Mark::Done => {}
            }
        }
        marks.insert(node, Mark::Done);
        None
    }

    for node in nodes {
        if marks[node] == Mark::New {
            if let Some(cycle) = visit(node, edges, &mut marks, &mut Vec::new()) {
                return Some(cycle);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(d: &str, p: &str, c: f64) -> DependencyEdge {
        DependencyEdge {
            dependent: d.into(),
            prerequisite: p.into(),
            via_parameter: format!("{p}Id"),
            confidence: c,
            provenance: Provenance::Inferred,
        }
    }

    fn resource(name: &str) -> Resource {
        Resource {
            name: name.into(),
            id_field_names: vec![],
            schema: None,
            provenance: Provenance::Inferred,
        }
    }

    #[test]
    fn topological_order_puts_prerequisites_first() {
        let model = SemanticModel {
            resources: ["author", "book", "customer", "order"].map(resource).to_vec(),
            bindings: vec![],
            edges: vec![
                edge("book", "author", 1.0),
                edge("order", "book", 1.0),
                edge("order", "customer", 1.0),
            ],
        };
        assert_eq!(model.topological_order(), ["author", "customer", "book", "order"]);
        assert!(model.find_cycle().is_none());
    }

    #[test]
    fn cycles_are_found() {
        let edges = vec![edge("a", "b", 0.9), edge("b", "c", 0.8), edge("c", "a", 0.85)];
        let mut cycle = find_cycle(&edges).unwrap();
        cycle.sort();
        assert_eq!(cycle, [0, 1, 2]);
        assert!(find_cycle(&edges[..2]).is_none());
    }
}
