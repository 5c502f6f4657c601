//! Sampling specifications: a value domain and component mixture for every
//! operation parameter, plus weighted selection of operations.

mod select;
mod values;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{id_match, input_name, CrudKind, SemanticModel};
use crate::names::DEFAULT_THRESHOLD;
use crate::spec::{
    path_segments, ApiSpecIR, OperationDef, ParamLocation, ParameterDef, SchemaKind, SchemaNode,
    Segment,
};

pub use select::{select_operation, Selector, WeightTable};
pub use values::{sample_value, synthesize_id};
pub(crate) use values::id_text;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplingError {
    #[error("no operation has a positive selection weight")]
    NoSelectableOperation,
}

/// Which mixture component produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTag {
    ValidRandom,
    Boundary,
    InvalidTyped,
    FromState,
}

impl ValueTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueTag::ValidRandom => "valid-random",
            ValueTag::Boundary => "boundary",
            ValueTag::InvalidTyped => "invalid-typed",
            ValueTag::FromState => "from-state",
        }
    }
}

impl fmt::Display for ValueTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weights of the four value components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mixture {
    pub valid_random: f64,
    pub from_state: f64,
    pub boundary: f64,
    pub invalid_typed: f64,
}

impl Default for Mixture {
    fn default() -> Self {
        Mixture {
            valid_random: 0.70,
            from_state: 0.20,
            boundary: 0.07,
            invalid_typed: 0.03,
        }
    }
}

impl Mixture {
    /// Default for parameters that carry a resource identifier.
    pub fn reference_default() -> Mixture {
        Mixture {
            valid_random: 0.20,
            from_state: 0.70,
            boundary: 0.07,
            invalid_typed: 0.03,
        }
    }

    pub fn weight(&self, tag: ValueTag) -> f64 {
        match tag {
            ValueTag::ValidRandom => self.valid_random,
            ValueTag::FromState => self.from_state,
            ValueTag::Boundary => self.boundary,
            ValueTag::InvalidTyped => self.invalid_typed,
        }
    }

    pub fn is_valid(&self) -> bool {
        let parts = [self.valid_random, self.from_state, self.boundary, self.invalid_typed];
        parts.iter().all(|w| w.is_finite() && *w >= 0.0) && parts.iter().sum::<f64>() > 0.0
    }

    /// Zeroes the components the domain cannot produce and rescales the rest
    /// to sum to 1. Valid-random takes all the mass if nothing else remains.
    pub fn restricted(&self, applicable: impl Fn(ValueTag) -> bool) -> Mixture {
        let w = |tag| if applicable(tag) { self.weight(tag).max(0.0) } else { 0.0 };
        let mut m = Mixture {
            valid_random: w(ValueTag::ValidRandom),
            from_state: w(ValueTag::FromState),
            boundary: w(ValueTag::Boundary),
            invalid_typed: w(ValueTag::InvalidTyped),
        };
        let total = m.valid_random + m.from_state + m.boundary + m.invalid_typed;
        if total <= 0.0 {
            return Mixture {
                valid_random: 1.0,
                from_state: 0.0,
                boundary: 0.0,
                invalid_typed: 0.0,
            };
        }
        m.valid_random /= total;
        m.from_state /= total;
        m.boundary /= total;
        m.invalid_typed /= total;
        m
    }
}

/// A resource instance named by its identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub resource: String,
    pub id: String,
}

/// One drawn parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledValue {
    pub value: Value,
    pub tag: ValueTag,
    /// The constraint an invalid-typed value breaks.
    pub violation: Option<String>,
    /// Resource instances the value names.
    pub references: Vec<InstanceRef>,
}

/// A resource a reference parameter may point at.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTarget {
    pub resource: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainKind {
    EnumSet(Vec<Value>),
    IntegerRange {
        min: i64,
        max: i64,
    },
    NumberRange {
        min: f64,
        max: f64,
    },
    StringPattern {
        pattern: Option<String>,
        min_len: u64,
        max_len: u64,
        format: Option<String>,
    },
    Boolean,
    /// Identifier of an instance of one of the targets; `base` describes
    /// the identifier's own syntax.
    ResourceId {
        targets: Vec<ReferenceTarget>,
        base: Box<ValueDomain>,
    },
    Composite {
        fields: Vec<(String, ValueDomain)>,
        required: BTreeSet<String>,
    },
    Array {
        items: Box<ValueDomain>,
        min_items: u64,
        max_items: u64,
    },
    Any,
}

impl DomainKind {
    pub fn name(&self) -> &'static str {
        match self {
            DomainKind::EnumSet(_) => "enum-set",
            DomainKind::IntegerRange { .. } => "integer-range",
            DomainKind::NumberRange { .. } => "number-range",
            DomainKind::StringPattern { .. } => "string-pattern",
            DomainKind::Boolean => "boolean",
            DomainKind::ResourceId { .. } => "reference-to-resource-id",
            DomainKind::Composite { .. } => "composite-object",
            DomainKind::Array { .. } => "array",
            DomainKind::Any => "any",
        }
    }
}

/// Values a parameter can take and how often each component is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDomain {
    pub kind: DomainKind,
    /// Source schema; valid values conform to it.
    pub schema: SchemaNode,
    pub location: ParamLocation,
    /// Normalized to the components this domain supports.
    pub mixture: Mixture,
}

impl ValueDomain {
    /// Resources this domain can reference, directly or through array items.
    pub fn reference_targets(&self) -> &[ReferenceTarget] {
        match &self.kind {
            DomainKind::ResourceId { targets, .. } => targets,
            DomainKind::Array { items, .. } => items.reference_targets(),
            _ => &[],
        }
    }

    /// Lower and upper boundary values, valid by construction.
    pub fn boundary_values(&self) -> Vec<Value> {
        values::boundary_values(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSamplerSet {
    /// In operation parameter order.
    pub per_parameter: IndexMap<String, ValueDomain>,
}

/// Sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub weights: WeightTable,
    pub mixture: Mixture,
    /// Mixture for parameters that carry a resource identifier.
    pub reference_mixture: Mixture,
    /// Probability that an optional parameter is sent.
    pub optional_probability: f64,
    pub max_string_length: u64,
    /// Name-match threshold for reference parameters.
    pub threshold: f64,
    /// Operations under these path prefixes are never selected.
    pub exclude_path_prefixes: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            weights: WeightTable::default(),
            mixture: Mixture::default(),
            reference_mixture: Mixture::reference_default(),
            optional_probability: 0.5,
            max_string_length: 64,
            threshold: DEFAULT_THRESHOLD,
            exclude_path_prefixes: vec!["/_admin".to_string()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplingSpec {
    /// Keyed by operation key.
    pub per_operation: BTreeMap<String, ParameterSamplerSet>,
    pub weights: WeightTable,
    pub config: SamplingConfig,
}

/// Builds a domain for every parameter of every operation.
pub fn build_sampling_spec(
    spec: &ApiSpecIR,
    model: &SemanticModel,
    config: &SamplingConfig,
) -> SamplingSpec {
    let per_operation = spec
        .operations
        .iter()
        .map(|op| {
            let per_parameter = op
                .parameters
                .iter()
                .map(|p| (p.name.clone(), parameter_domain(op, p, model, config)))
                .collect();
            (op.key(), ParameterSamplerSet { per_parameter })
        })
        .collect();
    SamplingSpec {
        per_operation,
        weights: config.weights.clone(),
        config: config.clone(),
    }
}

fn parameter_domain(
    op: &OperationDef,
    param: &ParameterDef,
    model: &SemanticModel,
    config: &SamplingConfig,
) -> ValueDomain {
    let binding = model.binding(&op.key());
    let own = binding.and_then(|b| model.resource(&b.resource));
    let trailing = matches!(
        path_segments(&op.path_template).last(),
        Some(Segment::Param(p)) if *p == param.name
    );
    if let (Some(binding), Some(own)) = (binding, own) {
        let names_own = trailing
            || (binding.crud_kind != CrudKind::Create
                && id_match(&input_name(op, &param.name), own) >= config.threshold);
        if names_own {
            let targets = vec![ReferenceTarget {
                resource: own.name.clone(),
                confidence: 1.0,
            }];
            return reference_domain(&param.schema, param.location, targets, config);
        }
        let targets: Vec<ReferenceTarget> = model
            .edges_via(&binding.resource, &param.name)
            .map(|e| ReferenceTarget {
                resource: e.prerequisite.clone(),
                confidence: e.confidence,
            })
            .collect();
        if !targets.is_empty() {
            return reference_domain(&param.schema, param.location, targets, config);
        }
    }
    schema_domain(&param.schema, param.location, config)
}

fn reference_domain(
    schema: &SchemaNode,
    location: ParamLocation,
    targets: Vec<ReferenceTarget>,
    config: &SamplingConfig,
) -> ValueDomain {
    if schema.kind == SchemaKind::Array {
        let c = &schema.constraints;
        let items = reference_domain(schema.element(), location, targets, config);
        let (min_items, max_items) = item_bounds(c.min_items, c.max_items);
        let kind = DomainKind::Array {
            items: Box::new(items),
            min_items,
            max_items,
        };
        return finish(kind, schema, location, &config.reference_mixture);
    }
    let base = schema_domain(schema, location, config);
    let kind = DomainKind::ResourceId {
        targets,
        base: Box::new(base),
    };
    finish(kind, schema, location, &config.reference_mixture)
}

/// Domain derived from the schema alone.
pub fn schema_domain(schema: &SchemaNode, location: ParamLocation, config: &SamplingConfig) -> ValueDomain {
    let c = &schema.constraints;
    let kind = if let Some(values) = c.enum_values.as_ref().filter(|v| !v.is_empty()) {
        DomainKind::EnumSet(values.clone())
    } else {
        match schema.kind {
            SchemaKind::Integer => {
                let (min, max) = integer_bounds(schema);
                DomainKind::IntegerRange { min, max }
            }
            SchemaKind::Number => {
                let (min, max) = number_bounds(schema);
                DomainKind::NumberRange { min, max }
            }
            SchemaKind::String => {
                let min_len = c.min_length.unwrap_or(0);
                let max_len = c
                    .max_length
                    .unwrap_or(config.max_string_length.max(min_len))
                    .max(min_len);
                DomainKind::StringPattern {
                    pattern: c.pattern.clone(),
                    min_len,
                    max_len,
                    format: c.format.clone(),
                }
            }
            SchemaKind::Boolean => DomainKind::Boolean,
            SchemaKind::Array => {
                let items = schema_domain(schema.element(), location, config);
                let (min_items, max_items) = item_bounds(c.min_items, c.max_items);
                DomainKind::Array {
                    items: Box::new(items),
                    min_items,
                    max_items,
                }
            }
            SchemaKind::Object => DomainKind::Composite {
                fields: c
                    .properties
                    .iter()
                    .map(|(name, s)| (name.clone(), schema_domain(s, ParamLocation::BodyField, config)))
                    .collect(),
                required: c.required.iter().cloned().collect(),
            },
            SchemaKind::Any => DomainKind::Any,
        }
    };
    finish(kind, schema, location, &config.mixture)
}

fn finish(kind: DomainKind, schema: &SchemaNode, location: ParamLocation, mixture: &Mixture) -> ValueDomain {
    let mut domain = ValueDomain {
        kind,
        schema: schema.clone(),
        location,
        mixture: Mixture::default(),
    };
    let boundary = !values::boundary_values(&domain).is_empty();
    let invalid = values::can_violate(&domain);
    let from_state = !domain.reference_targets().is_empty();
    domain.mixture = mixture.restricted(|tag| match tag {
        ValueTag::ValidRandom => true,
        ValueTag::FromState => from_state,
        ValueTag::Boundary => boundary,
        ValueTag::InvalidTyped => invalid,
    });
    domain
}

/// Span used on a side of a numeric range the schema leaves open.
const OPEN_SPAN: i64 = 1_000_000;

fn integer_bounds(schema: &SchemaNode) -> (i64, i64) {
    let c = &schema.constraints;
    let lo = c.minimum.map(|m| {
        let m = m.ceil();
        if c.exclusive_minimum && m == c.minimum.unwrap() {
            m as i64 + 1
        } else {
            m as i64
        }
    });
    let hi = c.maximum.map(|m| {
        let m = m.floor();
        if c.exclusive_maximum && m == c.maximum.unwrap() {
            m as i64 - 1
        } else {
            m as i64
        }
    });
    match (lo, hi) {
        (Some(lo), Some(hi)) => (lo, hi.max(lo)),
        (Some(lo), None) => (lo, lo.saturating_add(OPEN_SPAN)),
        (None, Some(hi)) => (hi.saturating_sub(OPEN_SPAN), hi),
        (None, None) => (-OPEN_SPAN, OPEN_SPAN),
    }
}

fn number_bounds(schema: &SchemaNode) -> (f64, f64) {
    let c = &schema.constraints;
    let span = OPEN_SPAN as f64;
    match (c.minimum, c.maximum) {
        (Some(lo), Some(hi)) => (lo, hi.max(lo)),
        (Some(lo), None) => (lo, lo + span),
        (None, Some(hi)) => (hi - span, hi),
        (None, None) => (-span, span),
    }
}

/// Item count bounds; an open maximum allows three more than the minimum.
fn item_bounds(min: Option<u64>, max: Option<u64>) -> (u64, u64) {
    let min = min.unwrap_or(0);
    let max = max.unwrap_or(min + 3).max(min);
    (min, max)
}
