//! Request generation and the online exercise loop.

mod run;

use std::collections::BTreeMap;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::driver::WireRequest;
use crate::model::{CrudKind, OperationBinding, SemanticModel};
use crate::sampling::{
    id_text, sample_value, InstanceRef, SamplingError, SamplingSpec, Selector, ValueTag,
};
use crate::spec::{path_segments, ApiSpecIR, Method, ParamLocation, Segment, WHOLE_BODY_PARAM};
use crate::state::StateStore;

pub use run::{
    run_concurrent, run_sequential, Counters, Progress, RunConfig, RunError, RunResult, Runner,
    StopHandle, StopReason, Verdict,
};

/// Characters left unescaped in path segments and query components.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

/// One filled parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedParam {
    pub name: String,
    pub location: ParamLocation,
    pub value: Value,
    pub tag: ValueTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<InstanceRef>,
}

/// A fully concrete request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPlan {
    pub plan_id: u64,
    pub binding: OperationBinding,
    pub method: Method,
    /// Base path, path and query; no placeholders remain.
    pub concrete_url: String,
    pub headers: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    /// Parameters that were sent, in operation order.
    pub params: Vec<PlannedParam>,
    /// The instance a read, update or delete addresses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<InstanceRef>,
}

impl RequestPlan {
    pub fn value_tags(&self) -> BTreeMap<String, ValueTag> {
        self.params.iter().map(|p| (p.name.clone(), p.tag)).collect()
    }

    pub fn to_wire(&self) -> WireRequest {
        WireRequest {
            method: http::Method::from_bytes(self.method.as_str().as_bytes()).expect("standard method"),
            target: self.concrete_url.clone(),
            headers: self.headers.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            body: self
                .body
                .as_ref()
                .map(|b| serde_json::to_vec(b).expect("json value serializes")),
        }
    }
}

fn scalar_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn encode(text: &str) -> String {
    utf8_percent_encode(text, COMPONENT).to_string()
}

fn path_text(value: &Value) -> String {
    match value {
        Value::Array(items) => items.iter().map(|v| encode(&scalar_text(v))).collect::<Vec<_>>().join(","),
        other => encode(&scalar_text(other)),
    }
}

/// Fills every parameter of `binding`'s operation.
pub fn fill_plan<R: Rng + ?Sized>(
    spec: &ApiSpecIR,
    sampling: &SamplingSpec,
    binding: &OperationBinding,
    store: &StateStore,
    rng: &mut R,
    plan_id: u64,
) -> RequestPlan {
    let op = spec
        .operation(&binding.operation)
        .expect("binding names an operation of the spec");
    let domains = &sampling.per_operation[&binding.operation].per_parameter;
    let optional = sampling.config.optional_probability.clamp(0.0, 1.0);

    let mut params = Vec::new();
    for def in &op.parameters {
        let send = def.required || def.location == ParamLocation::Path || rng.random_bool(optional);
        if !send {
            continue;
        }
        let sampled = sample_value(&domains[&def.name], store, rng);
        params.push(PlannedParam {
            name: def.name.clone(),
            location: def.location,
            value: sampled.value,
            tag: sampled.tag,
            violation: sampled.violation,
            references: sampled.references,
        });
    }

    let by_name: BTreeMap<&str, &PlannedParam> = params.iter().map(|p| (p.name.as_str(), p)).collect();
    let mut url = spec.base_path().trim_end_matches('/').to_string();
    for segment in path_segments(&op.path_template) {
        url.push('/');
        match segment {
            Segment::Literal(text) => url.push_str(text),
            Segment::Param(name) => url.push_str(&by_name.get(name).map_or(String::new(), |p| path_text(&p.value))),
        }
    }
    if url.is_empty() {
        url.push('/');
    }
    let mut query = Vec::new();
    for p in params.iter().filter(|p| p.location == ParamLocation::Query) {
        match &p.value {
            Value::Array(items) => {
                query.extend(items.iter().map(|v| format!("{}={}", encode(&p.name), encode(&scalar_text(v)))))
            }
            v => query.push(format!("{}={}", encode(&p.name), encode(&scalar_text(v)))),
        }
    }
    if !query.is_empty() {
        url.push('?');
        url.push_str(&query.join("&"));
    }

    let mut headers = BTreeMap::new();
    for p in params.iter().filter(|p| p.location == ParamLocation::Header) {
        headers.insert(p.name.to_ascii_lowercase(), scalar_text(&p.value));
    }
    let body = op.request_body_schema.as_ref().map(|_| {
        if let Some(whole) = by_name.get(WHOLE_BODY_PARAM) {
            whole.value.clone()
        } else {
            let fields: Map<String, Value> = params
                .iter()
                .filter(|p| p.location == ParamLocation::BodyField)
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect();
            Value::Object(fields)
        }
    });
    if body.is_some() {
        headers.insert("content-type".into(), "application/json".into());
    }
    headers.insert("accept".into(), "application/json".into());

    let target = match binding.crud_kind {
        CrudKind::Read | CrudKind::Update | CrudKind::Delete => op
            .params_in(ParamLocation::Path)
            .last()
            .and_then(|def| by_name.get(def.name.as_str()))
            .filter(|p| p.tag != ValueTag::InvalidTyped)
            .and_then(|p| id_text(&p.value))
            .map(|id| InstanceRef {
                resource: binding.resource.clone(),
                id,
            }),
        _ => None,
    };

    RequestPlan {
        plan_id,
        binding: binding.clone(),
        method: op.method,
        concrete_url: url,
        headers,
        body,
        params,
        target,
    }
}

/// Selects an operation by weight and fills it.
pub fn generate_request<R: Rng + ?Sized>(
    spec: &ApiSpecIR,
    model: &SemanticModel,
    sampling: &SamplingSpec,
    store: &StateStore,
    rng: &mut R,
    plan_id: u64,
) -> Result<RequestPlan, SamplingError> {
    let selector = Selector::new(model, &sampling.weights, &sampling.config.exclude_path_prefixes)?;
    let binding = &model.bindings[selector.draw(rng)];
    Ok(fill_plan(spec, sampling, binding, store, rng, plan_id))
}

/// Stateful plan source: owns the PRNG and plan numbering. The first
/// `warmup` plans cycle through create operations with prerequisites first.
pub struct Generator<'a> {
    spec: &'a ApiSpecIR,
    model: &'a SemanticModel,
    sampling: &'a SamplingSpec,
    selector: Selector,
    warmup_ops: Vec<usize>,
    warmup_left: usize,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl<'a> Generator<'a> {
    pub fn new(
        spec: &'a ApiSpecIR,
        model: &'a SemanticModel,
        sampling: &'a SamplingSpec,
        seed: u64,
        warmup: usize,
    ) -> Result<Generator<'a>, SamplingError> {
        let selector = Selector::new(model, &sampling.weights, &sampling.config.exclude_path_prefixes)?;
        let order = model.topological_order();
        let mut warmup_ops: Vec<usize> = model
            .bindings
            .iter()
            .enumerate()
            .filter(|(i, b)| b.crud_kind == CrudKind::Create && selector.is_selectable(*i))
            .map(|(i, _)| i)
            .collect();
        warmup_ops.sort_by_key(|&i| {
            let resource = &model.bindings[i].resource;
            (order.iter().position(|r| r == resource).unwrap_or(usize::MAX), i)
        });
        Ok(Generator {
            spec,
            model,
            sampling,
            selector,
            warmup_left: if warmup_ops.is_empty() { 0 } else { warmup },
            warmup_ops,
            next_id: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_plan(&mut self, store: &StateStore) -> RequestPlan {
        let index = if self.warmup_left > 0 {
            self.warmup_left -= 1;
            let n = self.next_id as usize - 1;
            self.warmup_ops[n % self.warmup_ops.len()]
        } else {
            self.selector.draw(&mut self.rng)
        };
        let plan_id = self.next_id;
        self.next_id += 1;
        fill_plan(
            self.spec,
            self.sampling,
            &self.model.bindings[index],
            store,
            &mut self.rng,
            plan_id,
        )
    }
}
