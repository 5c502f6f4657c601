//! Internal state: resource instances the exerciser created or discovered,
//! their lifecycle, and the status codes that state implies.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::driver::HttpExchangeResult;
use crate::generator::RequestPlan;
use crate::model::{CrudKind, SemanticModel};
use crate::names::match_names;
use crate::sampling::{InstanceRef, ValueTag};
use crate::spec::{OperationDef, StatusPattern};

/// Default bound on tracked instances.
pub const DEFAULT_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifecycle {
    Live,
    Deleted,
    /// A delete may or may not have taken effect.
    Unknown,
}

impl Lifecycle {
    pub const ALL: [Lifecycle; 3] = [Lifecycle::Live, Lifecycle::Deleted, Lifecycle::Unknown];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceInstance {
    pub resource: String,
    pub id_value: String,
    pub lifecycle: Lifecycle,
    pub last_representation: Option<Value>,
    /// Trace event that first recorded the instance.
    pub created_by: u64,
}

type Key = (String, String);

/// Tracked instances. Every mutation advances the epoch.
#[derive(Debug, Clone, Default)]
pub struct StateStore {
    instances: IndexMap<Key, ResourceInstance>,
    /// Per resource: all ids in insertion order, and ids per lifecycle.
    by_resource: BTreeMap<String, (IndexSet<String>, [IndexSet<String>; 3])>,
    epoch: u64,
    capacity: usize,
}

impl StateStore {
    pub fn new(capacity: usize) -> StateStore {
        StateStore {
            capacity: capacity.max(1),
            ..StateStore::default()
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, resource: &str, id: &str) -> Option<&ResourceInstance> {
        self.instances.get(&(resource.to_string(), id.to_string()))
    }

    pub fn lifecycle(&self, resource: &str, id: &str) -> Option<Lifecycle> {
        self.get(resource, id).map(|i| i.lifecycle)
    }

    pub fn instances(&self) -> impl Iterator<Item = &ResourceInstance> {
        self.instances.values()
    }

    /// Ids of a resource whose lifecycle is in `filter`, in insertion order.
    pub fn query_ids(&self, resource: &str, filter: &[Lifecycle]) -> Vec<String> {
        let Some((all, _)) = self.by_resource.get(resource) else {
            return Vec::new();
        };
        all.iter()
            .filter(|id| {
                self.lifecycle(resource, id)
                    .is_some_and(|l| filter.contains(&l))
            })
            .cloned()
            .collect()
    }

    pub fn count(&self, resource: &str, lifecycle: Lifecycle) -> usize {
        self.by_resource
            .get(resource)
            .map_or(0, |(_, sets)| sets[lifecycle.slot()].len())
    }

    /// The `i`-th id with the given lifecycle, in order of reaching it.
    pub fn id_at(&self, resource: &str, lifecycle: Lifecycle, i: usize) -> Option<&str> {
        self.by_resource
            .get(resource)
            .and_then(|(_, sets)| sets[lifecycle.slot()].get_index(i))
            .map(String::as_str)
    }

    /// Records a live instance; an existing one is replaced.
    pub fn insert_live(&mut self, resource: &str, id: &str, representation: Option<Value>, created_by: u64) {
        self.remove(resource, id);
        let key = (resource.to_string(), id.to_string());
        self.instances.insert(
            key,
            ResourceInstance {
                resource: resource.to_string(),
                id_value: id.to_string(),
                lifecycle: Lifecycle::Live,
                last_representation: representation,
                created_by,
            },
        );
        let (all, sets) = self.by_resource.entry(resource.to_string()).or_default();
        all.insert(id.to_string());
        sets[Lifecycle::Live.slot()].insert(id.to_string());
        self.epoch += 1;
        self.evict();
    }

    /// Moves an instance to another lifecycle. Returns false when the
    /// instance is unknown or the transition is not allowed.
    pub fn mark(&mut self, resource: &str, id: &str, to: Lifecycle) -> bool {
        let key = (resource.to_string(), id.to_string());
        let Some(instance) = self.instances.get_mut(&key) else {
            return false;
        };
        let from = instance.lifecycle;
        let allowed = matches!(
            (from, to),
            (Lifecycle::Live, Lifecycle::Deleted)
                | (Lifecycle::Live, Lifecycle::Unknown)
                | (Lifecycle::Unknown, Lifecycle::Live)
                | (Lifecycle::Unknown, Lifecycle::Deleted)
        );
        if !allowed {
            return false;
        }
        instance.lifecycle = to;
        let (_, sets) = self.by_resource.get_mut(resource).expect("indexed");
        sets[from.slot()].shift_remove(id);
        sets[to.slot()].insert(id.to_string());
        self.epoch += 1;
        true
    }

    /// Replaces the representation of an instance that is not deleted.
    pub fn refresh(&mut self, resource: &str, id: &str, representation: Value) -> bool {
        let key = (resource.to_string(), id.to_string());
        match self.instances.get_mut(&key) {
            Some(instance) if instance.lifecycle != Lifecycle::Deleted => {
                instance.last_representation = Some(representation);
                self.epoch += 1;
                true
            }
            _ => false,
        }
    }

    fn remove(&mut self, resource: &str, id: &str) {
        let key = (resource.to_string(), id.to_string());
        if let Some(old) = self.instances.shift_remove(&key) {
            if let Some((all, sets)) = self.by_resource.get_mut(resource) {
                all.shift_remove(id);
                sets[old.lifecycle.slot()].shift_remove(id);
            }
            self.epoch += 1;
        }
    }

    /// Drops the oldest deleted instances first, then the oldest of any
    /// lifecycle, until within capacity.
    fn evict(&mut self) {
        while self.instances.len() > self.capacity {
            let victim = self
                .instances
                .values()
                .find(|i| i.lifecycle == Lifecycle::Deleted)
                .or_else(|| self.instances.values().next())
                .map(|i| (i.resource.clone(), i.id_value.clone()))
                .expect("nonempty");
            self.remove(&victim.0, &victim.1);
        }
    }

    /// Debug dump of every instance, keyed by epoch.
    pub fn snapshot_json(&self) -> Value {
        json!({
            "epoch": self.epoch,
            "instances": self.instances.values().collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StateError {
    #[error("{operation} succeeded but its response carries no identifier for `{resource}`")]
    IdExtractionFailure { operation: String, resource: String },
}

/// One lifecycle change made by an effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub resource: String,
    pub id: String,
    pub lifecycle: Lifecycle,
}

/// What an exchange did to the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EffectDelta {
    pub changes: Vec<Change>,
}

/// Settings for reading identifiers out of responses.
#[derive(Debug, Clone, Copy)]
pub struct EffectContext<'a> {
    pub model: &'a SemanticModel,
    pub threshold: f64,
}

/// Applies what an exchange implies for the tracked instances.
pub fn apply_effect(
    plan: &RequestPlan,
    response: &HttpExchangeResult,
    store: &mut StateStore,
    ctx: EffectContext<'_>,
    event_id: u64,
) -> Result<EffectDelta, StateError> {
    let mut delta = EffectDelta::default();
    let resource = plan.binding.resource.as_str();
    let kind = plan.binding.crud_kind;
    let status = response.status;
    let success = response.is_success();
    let note = |delta: &mut EffectDelta, store: &StateStore, id: &str| {
        if let Some(lifecycle) = store.lifecycle(resource, id) {
            delta.changes.push(Change {
                resource: resource.to_string(),
                id: id.to_string(),
                lifecycle,
            });
        }
    };

    match kind {
        CrudKind::Create if success => {
            let body = response.json.as_ref();
            let id = body.and_then(|b| extract_id(b, resource, ctx));
            let Some(id) = id else {
                return Err(StateError::IdExtractionFailure {
                    operation: plan.binding.operation.clone(),
                    resource: resource.to_string(),
                });
            };
            match store.lifecycle(resource, &id) {
                Some(Lifecycle::Live) => {
                    store.refresh(resource, &id, body.cloned().unwrap_or(Value::Null));
                }
                _ => store.insert_live(resource, &id, body.cloned(), event_id),
            }
            note(&mut delta, store, &id);
        }
        CrudKind::Read | CrudKind::Update if success => {
            if let Some(target) = &plan.target {
                let body = response.json.clone().unwrap_or(Value::Null);
                match store.lifecycle(resource, &target.id) {
                    None => store.insert_live(resource, &target.id, Some(body), event_id),
                    Some(Lifecycle::Unknown) => {
                        store.mark(resource, &target.id, Lifecycle::Live);
                        store.refresh(resource, &target.id, body);
                    }
                    Some(Lifecycle::Live) => {
                        store.refresh(resource, &target.id, body);
                    }
                    Some(Lifecycle::Deleted) => {}
                }
                note(&mut delta, store, &target.id);
            }
        }
        CrudKind::Read | CrudKind::Update if matches!(status, Some(404 | 410)) => {
            if let Some(target) = &plan.target {
                if store.lifecycle(resource, &target.id) == Some(Lifecycle::Unknown) {
                    store.mark(resource, &target.id, Lifecycle::Deleted);
                    note(&mut delta, store, &target.id);
                }
            }
        }
        CrudKind::ReadList if success => {
            let items: &[Value] = response.json.as_ref().and_then(list_items).map_or(&[], Vec::as_slice);
            for item in items {
                let Some(id) = extract_id(item, resource, ctx) else { continue };
                match store.lifecycle(resource, &id) {
                    None => store.insert_live(resource, &id, Some(item.clone()), event_id),
                    Some(Lifecycle::Unknown) => {
                        store.mark(resource, &id, Lifecycle::Live);
                        store.refresh(resource, &id, item.clone());
                    }
                    Some(Lifecycle::Live) => {
                        store.refresh(resource, &id, item.clone());
                    }
                    Some(Lifecycle::Deleted) => continue,
                }
                note(&mut delta, store, &id);
            }
        }
        CrudKind::Delete => {
            if let Some(target) = &plan.target {
                let uncertain = status.is_none_or(|s| s >= 500);
                let changed = if success {
                    store.mark(resource, &target.id, Lifecycle::Deleted)
                } else if uncertain {
                    store.mark(resource, &target.id, Lifecycle::Unknown)
                } else if matches!(status, Some(404 | 410)) {
                    store.lifecycle(resource, &target.id) == Some(Lifecycle::Unknown)
                        && store.mark(resource, &target.id, Lifecycle::Deleted)
                } else {
                    false
                };
                if changed {
                    note(&mut delta, store, &target.id);
                }
            }
        }
        _ => {}
    }
    Ok(delta)
}

/// Elements of a list response: a top-level array, or the first array
/// found among the fields of an envelope object.
fn list_items(body: &Value) -> Option<&Vec<Value>> {
    match body {
        Value::Array(items) => Some(items),
        Value::Object(fields) => fields.values().find_map(Value::as_array),
        _ => None,
    }
}

/// The identifier in a representation: an exact id field first, then the
/// best-matching top-level field.
pub fn extract_id(body: &Value, resource: &str, ctx: EffectContext<'_>) -> Option<String> {
    let obj = body.as_object()?;
    let fields = ctx
        .model
        .resource(resource)
        .map(|r| r.id_field_names.as_slice())
        .unwrap_or_default();
    for field in fields {
        if let Some(id) = obj.get(field).and_then(crate::sampling::id_text) {
            return Some(id);
        }
    }
    let wanted = format!("{resource} id");
    obj.iter()
        .filter_map(|(name, v)| {
            let score = match_names(&crate::names::qualify(name, resource), &wanted);
            (score >= ctx.threshold).then_some((score, v))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .and_then(|(_, v)| crate::sampling::id_text(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    ExactState,
    StalePossible,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::ExactState => "exact-state",
            Basis::StalePossible => "stale-possible",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sequential,
    Concurrent,
}

/// Acceptable statuses for one exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusPrediction {
    /// Never empty.
    pub expected: Vec<StatusPattern>,
    pub basis: Basis,
    pub rationale: String,
}

const NOT_FOUND: [StatusPattern; 2] = [StatusPattern::Exact(404), StatusPattern::Exact(410)];

/// Predicts the status class of `plan` from the store. In concurrent mode
/// the requests still in flight may delete instances the plan names, and
/// the prediction admits both outcomes for those.
pub fn predict_status(
    plan: &RequestPlan,
    operation: &OperationDef,
    store: &StateStore,
    mode: Mode,
    in_flight: &[&RequestPlan],
) -> StatusPrediction {
    let basis = match mode {
        Mode::Sequential => Basis::ExactState,
        Mode::Concurrent => Basis::StalePossible,
    };
    let finish = |mut expected: Vec<StatusPattern>, rationale: String| {
        expected.sort();
        expected.dedup();
        StatusPrediction {
            expected,
            basis,
            rationale,
        }
    };

    if let Some(p) = plan.params.iter().find(|p| p.tag == ValueTag::InvalidTyped) {
        return finish(
            vec![StatusPattern::Class(4)],
            format!(
                "`{}` is invalid ({})",
                p.name,
                p.violation.as_deref().unwrap_or("constraint")
            ),
        );
    }

    let existence = |r: &InstanceRef| -> (bool, bool) {
        let (mut yes, mut no) = match store.lifecycle(&r.resource, &r.id) {
            Some(Lifecycle::Live) => (true, false),
            Some(Lifecycle::Unknown) => (true, true),
            Some(Lifecycle::Deleted) | None => (false, true),
        };
        let racing = in_flight.iter().any(|other| {
            other.binding.crud_kind == CrudKind::Delete && other.target.as_ref() == Some(r)
        });
        if racing {
            no = true;
        }
        if !yes && !no {
            yes = true;
        }
        (yes, no)
    };
    let describe = |r: &InstanceRef| {
        let state = match store.lifecycle(&r.resource, &r.id) {
            Some(Lifecycle::Live) => "live",
            Some(Lifecycle::Deleted) => "deleted",
            Some(Lifecycle::Unknown) => "of unknown state",
            None => "never seen",
        };
        format!("{} {} is {state}", r.resource, r.id)
    };
    let refs: Vec<&InstanceRef> = plan
        .params
        .iter()
        .flat_map(|p| &p.references)
        .filter(|r| Some(*r) != plan.target.as_ref())
        .collect();
    let refs_outcome = |expected: &mut Vec<StatusPattern>, notes: &mut Vec<String>| {
        let mut all_may_exist = true;
        let mut some_may_be_missing = false;
        for r in &refs {
            let (yes, no) = existence(r);
            all_may_exist &= yes;
            some_may_be_missing |= no;
            if no {
                notes.push(describe(r));
            }
        }
        if all_may_exist {
            expected.push(StatusPattern::Class(2));
        }
        if some_may_be_missing {
            expected.push(StatusPattern::Class(4));
        }
    };

    let mut expected = Vec::new();
    let mut notes = Vec::new();
    match plan.binding.crud_kind {
        CrudKind::Create => {
            refs_outcome(&mut expected, &mut notes);
            if notes.is_empty() {
                notes.push("all referenced instances are live".into());
            }
        }
        CrudKind::Read | CrudKind::Delete | CrudKind::Update => match &plan.target {
            Some(target) => {
                let (yes, no) = existence(target);
                notes.push(describe(target));
                if no {
                    expected.extend(NOT_FOUND);
                }
                if yes {
                    if plan.binding.crud_kind == CrudKind::Update {
                        refs_outcome(&mut expected, &mut notes);
                    } else {
                        expected.push(StatusPattern::Class(2));
                    }
                }
            }
            None => {
                expected.push(StatusPattern::Class(2));
                expected.extend(NOT_FOUND);
                notes.push("target instance is not identified".into());
            }
        },
        CrudKind::ReadList => {
            expected.push(StatusPattern::Class(2));
            notes.push("listing always succeeds".into());
        }
        CrudKind::Other => {
            if operation.responses.contains_key(&StatusPattern::Default) {
                expected.extend([2, 3, 4].map(StatusPattern::Class));
            } else {
                expected.extend(
                    operation
                        .responses
                        .keys()
                        .filter(|p| p.class().is_some_and(|c| c < 5)),
                );
            }
            if expected.is_empty() {
                expected.extend([2, 4].map(StatusPattern::Class));
            }
            notes.push("declared non-error statuses".into());
        }
    }
    finish(expected, notes.join("; "))
}

/// Widens an in-flight prediction for a delete of `deleted` dispatched
/// after it: the plan may now observe the instance either way.
pub fn widen_for_racing_delete(prediction: &mut StatusPrediction, plan: &RequestPlan, deleted: &InstanceRef) {
    let mut added = false;
    if plan.target.as_ref() == Some(deleted) {
        for p in NOT_FOUND {
            if !prediction.expected.contains(&p) {
                prediction.expected.push(p);
                added = true;
            }
        }
    }
    let referenced = plan
        .params
        .iter()
        .flat_map(|p| &p.references)
        .any(|r| r == deleted && Some(r) != plan.target.as_ref());
    if referenced && !prediction.expected.contains(&StatusPattern::Class(4)) {
        prediction.expected.push(StatusPattern::Class(4));
        added = true;
    }
    if added {
        prediction.expected.sort();
        prediction.basis = Basis::StalePossible;
        prediction.rationale.push_str(&format!("; {} {} deleted concurrently", deleted.resource, deleted.id));
    }
}
