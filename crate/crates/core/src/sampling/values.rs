use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use chrono::{TimeZone, Utc};
use rand::seq::{index, IndexedRandom};
use rand::{Rng, RngExt};
use serde_json::{Map, Number, Value};

use super::{DomainKind, InstanceRef, ReferenceTarget, SampledValue, ValueDomain, ValueTag};
use crate::checker::{format_ok, matches_pattern};
use crate::spec::{ParamLocation, SchemaKind};
use crate::state::{Lifecycle, StateStore};

/// Probability that an optional field of a nested object is filled.
const NESTED_OPTIONAL_PROBABILITY: f64 = 0.5;
/// Probability that a from-state draw takes a live identifier when deleted
/// ones exist too.
const LIVE_PROBABILITY: f64 = 0.9;
/// Preferred length of synthesized identifiers; long enough not to collide
/// with identifiers a service hands out.
const SYNTHETIC_ID_LEN: u64 = 20;
const MIN_SYNTHETIC_ID_LEN: usize = 16;
const ATTEMPTS: usize = 64;
const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const LOWER_ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
/// Characters used to break patterns; none of them is a path separator.
const PATTERN_BREAKERS: &[u8] = b"ABCXYZ-_~!*+0123456789";

/// Draws one value: first a mixture component, then a value from it.
pub fn sample_value<R: Rng + ?Sized>(
    domain: &ValueDomain,
    store: &StateStore,
    rng: &mut R,
) -> SampledValue {
    match draw_component(domain, rng) {
        ValueTag::FromState => {
            from_state(domain, store, rng).unwrap_or_else(|| valid_random(domain, rng))
        }
        ValueTag::Boundary => boundary(domain, rng).unwrap_or_else(|| valid_random(domain, rng)),
        ValueTag::InvalidTyped => invalid(domain, rng).unwrap_or_else(|| valid_random(domain, rng)),
        ValueTag::ValidRandom => valid_random(domain, rng),
    }
}

fn draw_component<R: Rng + ?Sized>(domain: &ValueDomain, rng: &mut R) -> ValueTag {
    let m = &domain.mixture;
    let mut u: f64 = rng.random();
    for tag in [ValueTag::FromState, ValueTag::Boundary, ValueTag::InvalidTyped] {
        let w = m.weight(tag);
        if u < w {
            return tag;
        }
        u -= w;
    }
    ValueTag::ValidRandom
}

fn valid_random<R: Rng + ?Sized>(domain: &ValueDomain, rng: &mut R) -> SampledValue {
    let value = valid_value(domain, rng);
    let references = references_of(domain, &value);
    SampledValue {
        value,
        tag: ValueTag::ValidRandom,
        violation: None,
        references,
    }
}

/// Instances a value names through the domain's reference targets.
fn references_of(domain: &ValueDomain, value: &Value) -> Vec<InstanceRef> {
    match (&domain.kind, value) {
        (DomainKind::ResourceId { targets, .. }, v) => match (best_target(targets), id_text(v)) {
            (Some(t), Some(id)) => vec![InstanceRef {
                resource: t.resource.clone(),
                id,
            }],
            _ => Vec::new(),
        },
        (DomainKind::Array { items, .. }, Value::Array(values)) => {
            values.iter().flat_map(|v| references_of(items, v)).collect()
        }
        _ => Vec::new(),
    }
}

fn best_target(targets: &[ReferenceTarget]) -> Option<&ReferenceTarget> {
    targets
        .iter()
        .reduce(|best, t| if t.confidence > best.confidence { t } else { best })
}

/// Text form of an identifier value.
pub(crate) fn id_text(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn valid_value<R: Rng + ?Sized>(domain: &ValueDomain, rng: &mut R) -> Value {
    match &domain.kind {
        DomainKind::EnumSet(values) => values.choose(rng).cloned().unwrap_or(Value::Null),
        DomainKind::IntegerRange { min, max } => Value::from(rng.random_range(*min..=*max)),
        DomainKind::NumberRange { min, max } => number_in(domain, *min, *max, rng),
        DomainKind::StringPattern {
            pattern,
            min_len,
            max_len,
            format,
        } => Value::String(valid_string(
            pattern.as_deref(),
            *min_len,
            *max_len,
            format.as_deref(),
            domain.location,
            rng,
        )),
        DomainKind::Boolean => Value::Bool(rng.random_bool(0.5)),
        DomainKind::ResourceId { base, .. } => synthesize_id(base, rng),
        DomainKind::Composite { fields, required } => {
            let mut obj = Map::new();
            for (name, field) in fields {
                if required.contains(name) || rng.random_bool(NESTED_OPTIONAL_PROBABILITY) {
                    obj.insert(name.clone(), valid_value(field, rng));
                }
            }
            Value::Object(obj)
        }
        DomainKind::Array {
            items,
            min_items,
            max_items,
        } => {
            let n = rng.random_range(*min_items..=*max_items);
            Value::Array((0..n).map(|_| valid_value(items, rng)).collect())
        }
        DomainKind::Any => Value::String(alnum(8, ALNUM, rng)),
    }
}

fn number_in<R: Rng + ?Sized>(domain: &ValueDomain, min: f64, max: f64, rng: &mut R) -> Value {
    let c = &domain.schema.constraints;
    let inside = |x: f64| {
        x >= min
            && x <= max
            && !(c.exclusive_minimum && x == min)
            && !(c.exclusive_maximum && x == max)
    };
    let x = if max > min { rng.random_range(min..=max) } else { min };
    let rounded = (x * 100.0).round() / 100.0;
    let x = if inside(rounded) {
        rounded
    } else if inside(x) {
        x
    } else {
        min + (max - min) / 2.0
    };
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn alnum<R: Rng + ?Sized>(len: u64, charset: &[u8], rng: &mut R) -> String {
    (0..len)
        .map(|_| *charset.choose(rng).expect("charset is nonempty") as char)
        .collect()
}

fn string_ok(s: &str, pattern: Option<&str>, min_len: u64, max_len: u64, format: Option<&str>) -> bool {
    let len = s.chars().count() as u64;
    len >= min_len
        && len <= max_len
        && pattern.is_none_or(|p| matches_pattern(p, s) != Some(false))
        && format.is_none_or(|f| format_ok(f, s))
}

fn valid_string<R: Rng + ?Sized>(
    pattern: Option<&str>,
    min_len: u64,
    max_len: u64,
    format: Option<&str>,
    location: ParamLocation,
    rng: &mut R,
) -> String {
    let lo = min_len.max(1).min(max_len);
    let lo = if location == ParamLocation::Path { lo.max(1) } else { lo };
    if let Some(pattern) = pattern {
        let mut last = String::new();
        for _ in 0..ATTEMPTS {
            if let Some(s) = regex_sample(pattern, rng) {
                if string_ok(&s, Some(pattern), lo, max_len, format) {
                    return s;
                }
                last = s;
            }
        }
        return last;
    }
    match format {
        Some("date-time") => return random_timestamp(rng).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        Some("date") => return random_timestamp(rng).format("%Y-%m-%d").to_string(),
        Some("email") => return format!("{}@example.com", alnum(8, LOWER_ALNUM, rng)),
        Some("uuid") => {
            let hex = alnum(32, b"0123456789abcdef", rng);
            return format!("{}-{}-{}-{}-{}", &hex[..8], &hex[8..12], &hex[12..16], &hex[16..20], &hex[20..]);
        }
        _ => {}
    }
    let len = rng.random_range(lo..=max_len.max(lo));
    alnum(len, ALNUM, rng)
}

fn random_timestamp<R: Rng + ?Sized>(rng: &mut R) -> chrono::DateTime<Utc> {
    let secs = rng.random_range(946_684_800i64..1_893_456_000);
    Utc.timestamp_opt(secs, 0).single().expect("in range")
}

fn regex_sample<R: Rng + ?Sized>(pattern: &str, rng: &mut R) -> Option<String> {
    static CACHE: OnceLock<Mutex<HashMap<String, Option<rand_regex::Regex>>>> = OnceLock::new();
    let generator = {
        let cache = CACHE.get_or_init(Default::default);
        let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(pattern.to_string())
            .or_insert_with(|| {
                let body = pattern.strip_prefix('^').unwrap_or(pattern);
                let body = body.strip_suffix('$').unwrap_or(body);
                rand_regex::Regex::compile(body, 16).ok()
            })
            .clone()
    }?;
    Some(rng.sample::<String, _>(&generator))
}

/// A syntactically valid identifier that a service is unlikely to have
/// issued.
pub fn synthesize_id<R: Rng + ?Sized>(base: &ValueDomain, rng: &mut R) -> Value {
    match &base.kind {
        DomainKind::StringPattern {
            pattern,
            min_len,
            max_len,
            format,
        } => {
            let pattern = pattern.as_deref();
            let format = format.as_deref();
            let len = SYNTHETIC_ID_LEN.clamp(*min_len, (*max_len).max(*min_len));
            if format.is_none() {
                let candidate = alnum(len, LOWER_ALNUM, rng);
                if string_ok(&candidate, pattern, *min_len, *max_len, None) {
                    return Value::String(candidate);
                }
            }
            if let Some(p) = pattern {
                let mut best: Option<String> = None;
                for _ in 0..ATTEMPTS {
                    let Some(s) = regex_sample(p, rng) else { break };
                    if !string_ok(&s, Some(p), (*min_len).max(1), *max_len, format) {
                        continue;
                    }
                    if s.chars().count() >= MIN_SYNTHETIC_ID_LEN {
                        return Value::String(s);
                    }
                    if best.as_ref().is_none_or(|b| b.len() < s.len()) {
                        best = Some(s);
                    }
                }
                if let Some(best) = best {
                    return Value::String(best);
                }
            }
            valid_value(base, rng)
        }
        DomainKind::IntegerRange { min, max } => {
            let lo = min.saturating_add((max.saturating_sub(*min)) / 2);
            Value::from(rng.random_range(lo..=*max))
        }
        _ => valid_value(base, rng),
    }
}

/// Boundary candidates: a fixed value, or a length for strings and arrays.
enum Edge {
    Value(Value),
    Length(u64),
}

fn edges(domain: &ValueDomain) -> Vec<Edge> {
    let c = &domain.schema.constraints;
    let mut out = Vec::new();
    match &domain.kind {
        DomainKind::IntegerRange { min, max } => {
            if c.minimum.is_some() {
                out.push(Edge::Value(Value::from(*min)));
            }
            if c.maximum.is_some() && (c.minimum.is_none() || max != min) {
                out.push(Edge::Value(Value::from(*max)));
            }
        }
        DomainKind::NumberRange { min, max } => {
            if c.minimum.is_some() && !c.exclusive_minimum {
                out.extend(Number::from_f64(*min).map(|n| Edge::Value(Value::Number(n))));
            }
            if c.maximum.is_some() && !c.exclusive_maximum && max != min {
                out.extend(Number::from_f64(*max).map(|n| Edge::Value(Value::Number(n))));
            }
        }
        DomainKind::StringPattern {
            pattern: None,
            format: None,
            min_len,
            max_len,
        } => {
            let floor = if domain.location == ParamLocation::BodyField { 0 } else { 1 };
            if c.min_length.is_some() && *min_len >= floor {
                out.push(Edge::Length(*min_len));
            }
            if c.max_length.is_some() && max_len != min_len {
                out.push(Edge::Length(*max_len));
            }
        }
        DomainKind::Array {
            min_items,
            max_items,
            ..
        } => {
            if c.min_items.is_some() {
                out.push(Edge::Length(*min_items));
            }
            if c.max_items.is_some() && max_items != min_items {
                out.push(Edge::Length(*max_items));
            }
        }
        _ => {}
    }
    out
}

pub(super) fn boundary_values(domain: &ValueDomain) -> Vec<Value> {
    edges(domain)
        .into_iter()
        .map(|e| match e {
            Edge::Value(v) => v,
            Edge::Length(n) => match &domain.kind {
                DomainKind::Array { .. } => Value::Array(vec![Value::Null; n as usize]),
                _ => Value::String("a".repeat(n as usize)),
            },
        })
        .collect()
}

fn boundary<R: Rng + ?Sized>(domain: &ValueDomain, rng: &mut R) -> Option<SampledValue> {
    let candidates = edges(domain);
    let edge = candidates.choose(rng)?;
    let value = match (edge, &domain.kind) {
        (Edge::Value(v), _) => v.clone(),
        (Edge::Length(n), DomainKind::Array { items, .. }) => {
            Value::Array((0..*n).map(|_| valid_value(items, rng)).collect())
        }
        (Edge::Length(n), _) => Value::String(alnum(*n, ALNUM, rng)),
    };
    let references = references_of(domain, &value);
    Some(SampledValue {
        value,
        tag: ValueTag::Boundary,
        violation: None,
        references,
    })
}

/// A way to break a domain's constraints.
#[derive(Debug, Clone, Copy)]
enum Breach {
    NotNumber,
    Fraction,
    BelowMin,
    AboveMax,
    NotInEnum,
    PatternMismatch,
    TooLong,
    TooShort,
    BadFormat,
    NotBoolean,
    TooFewItems,
    TooManyItems,
    WrongType,
    Null,
}

fn breaches(domain: &ValueDomain) -> Vec<Breach> {
    let body = domain.location == ParamLocation::BodyField;
    let wire_floor = if domain.location == ParamLocation::Path { 1 } else { 0 };
    let c = &domain.schema.constraints;
    let mut out = Vec::new();
    match &domain.kind {
        DomainKind::ResourceId { base, .. } => return breaches(base),
        DomainKind::Any => return out,
        DomainKind::EnumSet(values) => {
            if values.iter().all(Value::is_string) || !body {
                out.push(Breach::NotInEnum);
            }
        }
        DomainKind::IntegerRange { .. } | DomainKind::NumberRange { .. } => {
            out.push(Breach::NotNumber);
            if domain.schema.kind == SchemaKind::Integer {
                out.push(Breach::Fraction);
            }
            if c.minimum.is_some() {
                out.push(Breach::BelowMin);
            }
            if c.maximum.is_some() {
                out.push(Breach::AboveMax);
            }
        }
        DomainKind::StringPattern {
            pattern,
            min_len,
            format,
            ..
        } => {
            if pattern.is_some() {
                out.push(Breach::PatternMismatch);
            }
            if c.max_length.is_some() {
                out.push(Breach::TooLong);
            }
            if *min_len > 0 && *min_len > wire_floor {
                out.push(Breach::TooShort);
            }
            if matches!(format.as_deref(), Some("date-time" | "date")) {
                out.push(Breach::BadFormat);
            }
        }
        DomainKind::Boolean => {
            if !body {
                out.push(Breach::NotBoolean);
            }
        }
        DomainKind::Array { .. } => {
            if body {
                if c.min_items.is_some_and(|n| n > 0) {
                    out.push(Breach::TooFewItems);
                }
                if c.max_items.is_some() {
                    out.push(Breach::TooManyItems);
                }
            }
        }
        DomainKind::Composite { .. } => {}
    }
    if body {
        out.push(Breach::WrongType);
        if !domain.schema.nullable {
            out.push(Breach::Null);
        }
    }
    out
}

pub(super) fn can_violate(domain: &ValueDomain) -> bool {
    !breaches(domain).is_empty()
}

fn invalid<R: Rng + ?Sized>(domain: &ValueDomain, rng: &mut R) -> Option<SampledValue> {
    let mut options = breaches(domain);
    while !options.is_empty() {
        let i = rng.random_range(0..options.len());
        let breach = options.swap_remove(i);
        if let Some((value, violation)) = breach_value(domain, breach, rng) {
            return Some(SampledValue {
                value,
                tag: ValueTag::InvalidTyped,
                violation: Some(violation),
                references: Vec::new(),
            });
        }
    }
    None
}

fn base_of(domain: &ValueDomain) -> &ValueDomain {
    match &domain.kind {
        DomainKind::ResourceId { base, .. } => base,
        _ => domain,
    }
}

fn breach_value<R: Rng + ?Sized>(
    domain: &ValueDomain,
    breach: Breach,
    rng: &mut R,
) -> Option<(Value, String)> {
    let domain = base_of(domain);
    let c = &domain.schema.constraints;
    let s = |v: &str| Value::String(v.to_string());
    Some(match breach {
        Breach::NotNumber => (s(["abc", "x1", "one"].choose(rng)?), "type: not a number".into()),
        Breach::Fraction => {
            let v = if domain.location == ParamLocation::BodyField {
                Value::from(1.5)
            } else {
                s("1.5")
            };
            (v, "type: not an integer".into())
        }
        Breach::BelowMin => {
            let min = c.minimum?;
            let v = if domain.schema.kind == SchemaKind::Integer {
                Value::from(min.ceil() as i64 - 1)
            } else if c.exclusive_minimum {
                Value::from(min)
            } else {
                Value::from(min - 1.0)
            };
            (v, format!("minimum {min}"))
        }
        Breach::AboveMax => {
            let max = c.maximum?;
            let v = if domain.schema.kind == SchemaKind::Integer {
                Value::from(max.floor() as i64 + 1)
            } else if c.exclusive_maximum {
                Value::from(max)
            } else {
                Value::from(max + 1.0)
            };
            (v, format!("maximum {max}"))
        }
        Breach::NotInEnum => {
            let allowed = c.enum_values.as_deref().unwrap_or_default();
            let v = (0..ATTEMPTS)
                .map(|_| s(&format!("zz{}", alnum(6, LOWER_ALNUM, rng))))
                .find(|v| !allowed.contains(v))?;
            (v, "enum".into())
        }
        Breach::PatternMismatch => {
            let pattern = c.pattern.as_deref()?;
            let v = (0..ATTEMPTS)
                .map(|_| {
                    let len = rng.random_range(1..=8);
                    alnum(len, PATTERN_BREAKERS, rng)
                })
                .find(|v| matches_pattern(pattern, v) == Some(false))?;
            (Value::String(v), format!("pattern `{pattern}`"))
        }
        Breach::TooLong => {
            let max = c.max_length?;
            (Value::String(alnum(max + 1, ALNUM, rng)), format!("maxLength {max}"))
        }
        Breach::TooShort => {
            let min = c.min_length?;
            (Value::String(alnum(min - 1, ALNUM, rng)), format!("minLength {min}"))
        }
        Breach::BadFormat => {
            let format = c.format.clone()?;
            (s("not-a-date"), format!("format {format}"))
        }
        Breach::NotBoolean => (s("maybe"), "type: not a boolean".into()),
        Breach::TooFewItems => {
            let min = c.min_items?;
            let DomainKind::Array { items, .. } = &domain.kind else { return None };
            let v = Value::Array((1..min).map(|_| valid_value(items, rng)).collect());
            (v, format!("minItems {min}"))
        }
        Breach::TooManyItems => {
            let max = c.max_items?;
            let DomainKind::Array { items, .. } = &domain.kind else { return None };
            let v = Value::Array((0..=max).map(|_| valid_value(items, rng)).collect());
            (v, format!("maxItems {max}"))
        }
        Breach::WrongType => {
            let v = match domain.schema.kind {
                SchemaKind::String => Value::from(42),
                SchemaKind::Boolean => s("yes"),
                SchemaKind::Any => return None,
                _ => s("x"),
            };
            (v, format!("type: expected {}", domain.schema.kind.as_str()))
        }
        Breach::Null => (Value::Null, "nullable: null is not allowed".into()),
    })
}

fn from_state<R: Rng + ?Sized>(
    domain: &ValueDomain,
    store: &StateStore,
    rng: &mut R,
) -> Option<SampledValue> {
    match &domain.kind {
        DomainKind::ResourceId { targets, base } => {
            let resource = pick_target(targets, store, rng)?;
            let id = pick_id(&resource, store, rng)?;
            Some(SampledValue {
                value: id_value(base, &id),
                tag: ValueTag::FromState,
                violation: None,
                references: vec![InstanceRef { resource, id }],
            })
        }
        DomainKind::Array {
            items,
            min_items,
            max_items,
        } => {
            let DomainKind::ResourceId { targets, base } = &items.kind else {
                return None;
            };
            let resource = pick_target(targets, store, rng)?;
            let live = store.count(&resource, Lifecycle::Live);
            let dead = store.count(&resource, Lifecycle::Deleted);
            let lo = (*min_items).max(1);
            let hi = (*max_items).max(lo);
            let k = rng.random_range(lo..=hi) as usize;
            let mut ids: Vec<String> = if live >= k {
                index::sample(rng, live, k)
                    .into_iter()
                    .map(|i| store.id_at(&resource, Lifecycle::Live, i).unwrap().to_string())
                    .collect()
            } else if live > 0 {
                (0..k)
                    .map(|_| {
                        let i = rng.random_range(0..live);
                        store.id_at(&resource, Lifecycle::Live, i).unwrap().to_string()
                    })
                    .collect()
            } else {
                (0..k)
                    .map(|_| {
                        let i = rng.random_range(0..dead);
                        store.id_at(&resource, Lifecycle::Deleted, i).unwrap().to_string()
                    })
                    .collect()
            };
            if live > 0 && dead > 0 && !rng.random_bool(LIVE_PROBABILITY) {
                let slot = rng.random_range(0..ids.len());
                let i = rng.random_range(0..dead);
                ids[slot] = store.id_at(&resource, Lifecycle::Deleted, i).unwrap().to_string();
            }
            let value = Value::Array(ids.iter().map(|id| id_value(base, id)).collect());
            let references = ids
                .into_iter()
                .map(|id| InstanceRef {
                    resource: resource.clone(),
                    id,
                })
                .collect();
            Some(SampledValue {
                value,
                tag: ValueTag::FromState,
                violation: None,
                references,
            })
        }
        _ => None,
    }
}

/// Among targets with known instances, the most confident; ties broken at
/// random.
fn pick_target<R: Rng + ?Sized>(
    targets: &[ReferenceTarget],
    store: &StateStore,
    rng: &mut R,
) -> Option<String> {
    let known: Vec<&ReferenceTarget> = targets
        .iter()
        .filter(|t| {
            store.count(&t.resource, Lifecycle::Live) + store.count(&t.resource, Lifecycle::Deleted) > 0
        })
        .collect();
    let best = known.iter().map(|t| t.confidence).fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<&&ReferenceTarget> = known.iter().filter(|t| t.confidence == best).collect();
    top.choose(rng).map(|t| t.resource.clone())
}

fn pick_id<R: Rng + ?Sized>(resource: &str, store: &StateStore, rng: &mut R) -> Option<String> {
    let live = store.count(resource, Lifecycle::Live);
    let dead = store.count(resource, Lifecycle::Deleted);
    let lifecycle = if live > 0 && (dead == 0 || rng.random_bool(LIVE_PROBABILITY)) {
        Lifecycle::Live
    } else if dead > 0 {
        Lifecycle::Deleted
    } else {
        return None;
    };
    let n = store.count(resource, lifecycle);
    let i = rng.random_range(0..n);
    store.id_at(resource, lifecycle, i).map(str::to_string)
}

/// Stored identifiers are text; integer identifiers go back out as numbers.
fn id_value(base: &ValueDomain, id: &str) -> Value {
    if matches!(base.kind, DomainKind::IntegerRange { .. }) {
        if let Ok(n) = id.parse::<i64>() {
            return Value::from(n);
        }
    }
    Value::String(id.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::validate;
    use crate::model::infer_model;
    use crate::sampling::{build_sampling_spec, schema_domain, Mixture, SamplingConfig};
    use crate::spec::{load_spec, Format, SchemaNode};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn only(domain: &ValueDomain, tag: ValueTag) -> ValueDomain {
        let mut d = domain.clone();
        d.mixture = Mixture {
            valid_random: 0.0,
            from_state: 0.0,
            boundary: 0.0,
            invalid_typed: 0.0,
        };
        match tag {
            ValueTag::ValidRandom => d.mixture.valid_random = 1.0,
            ValueTag::FromState => d.mixture.from_state = 1.0,
            ValueTag::Boundary => d.mixture.boundary = 1.0,
            ValueTag::InvalidTyped => d.mixture.invalid_typed = 1.0,
        }
        d
    }

    fn int_domain(min: f64, max: f64) -> ValueDomain {
        let mut schema = SchemaNode::of(SchemaKind::Integer);
        schema.constraints.minimum = Some(min);
        schema.constraints.maximum = Some(max);
        schema_domain(&schema, ParamLocation::Query, &SamplingConfig::default())
    }

    fn fixture_spec() -> crate::sampling::SamplingSpec {
        let spec = load_spec(rexer_bookshop::FIXTURE_SPEC.as_bytes(), Format::Yaml).unwrap();
        let model = infer_model(&spec);
        build_sampling_spec(&spec, &model, &SamplingConfig::default())
    }

    fn customer_store(live: &[&str], deleted: &[&str]) -> StateStore {
        let mut store = StateStore::new(10_000);
        for id in live.iter().chain(deleted) {
            store.insert_live("customer", id, None, 0);
        }
        for id in deleted {
            store.mark("customer", id, Lifecycle::Deleted);
        }
        store
    }

    #[test]
    fn integer_boundaries_are_the_range_ends() {
        let d = int_domain(1.0, 10.0);
        assert_eq!(d.boundary_values(), vec![Value::from(1), Value::from(10)]);
        let d = only(&d, ValueTag::Boundary);
        let store = StateStore::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seen: BTreeSet<i64> = (0..200)
            .map(|_| sample_value(&d, &store, &mut rng))
            .inspect(|s| assert_eq!(s.tag, ValueTag::Boundary))
            .map(|s| s.value.as_i64().unwrap())
            .collect();
        assert_eq!(seen, BTreeSet::from([1, 10]));
    }

    #[test]
    fn enum_valid_values_are_exactly_the_enum() {
        let s = fixture_spec();
        let d = only(&s.per_operation["POST /books"].per_parameter["format"], ValueTag::ValidRandom);
        let store = StateStore::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seen: BTreeSet<String> = (0..200)
            .map(|_| sample_value(&d, &store, &mut rng).value.as_str().unwrap().to_string())
            .collect();
        assert_eq!(seen, BTreeSet::from(["hardcover".to_string(), "paperback".to_string()]));
    }

    #[test]
    fn from_state_picks_a_known_customer() {
        let s = fixture_spec();
        let d = only(&s.per_operation["POST /orders"].per_parameter["customerId"], ValueTag::FromState);
        let store = customer_store(&["c1", "c2"], &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seen: BTreeSet<String> = (0..200)
            .map(|_| sample_value(&d, &store, &mut rng))
            .inspect(|v| assert_eq!(v.tag, ValueTag::FromState))
            .map(|v| v.value.as_str().unwrap().to_string())
            .collect();
        assert_eq!(seen, BTreeSet::from(["c1".to_string(), "c2".to_string()]));
    }

    #[test]
    fn from_state_sometimes_names_deleted_instances() {
        let s = fixture_spec();
        let d = only(&s.per_operation["POST /orders"].per_parameter["customerId"], ValueTag::FromState);
        let store = customer_store(&["c1"], &["c2"]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let deleted = (0..2_000)
            .filter(|_| sample_value(&d, &store, &mut rng).value == "c2")
            .count();
        assert!((100..300).contains(&deleted), "{deleted}");
    }

    #[test]
    fn empty_state_falls_back_to_a_synthesized_id() {
        let s = fixture_spec();
        let d = only(&s.per_operation["POST /books"].per_parameter["authorId"], ValueTag::FromState);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v = sample_value(&d, &StateStore::new(10), &mut rng);
        assert_eq!(v.tag, ValueTag::ValidRandom);
        let id = v.value.as_str().unwrap();
        assert!(id.len() >= MIN_SYNTHETIC_ID_LEN);
        assert!(validate(&v.value, &d.schema).is_empty());
        assert_eq!(v.references[0].resource, "author");
    }

    #[test]
    fn invalid_path_ids_break_the_pattern() {
        let s = fixture_spec();
        let d = only(
            &s.per_operation["DELETE /customers/{customerId}"].per_parameter["customerId"],
            ValueTag::InvalidTyped,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let v = sample_value(&d, &StateStore::new(10), &mut rng);
            assert_eq!(v.tag, ValueTag::InvalidTyped);
            let text = v.value.as_str().unwrap();
            assert!(!text.is_empty() && !text.contains('/'));
            assert!(!validate(&v.value, &d.schema).is_empty());
            assert!(v.violation.is_some());
        }
    }

    #[test]
    fn order_book_ids_are_distinct_live_ids() {
        let s = fixture_spec();
        let d = only(&s.per_operation["POST /orders"].per_parameter["bookIds"], ValueTag::FromState);
        let mut store = StateStore::new(100);
        store.insert_live("book", "b1", None, 0);
        store.insert_live("book", "b2", None, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let v = sample_value(&d, &store, &mut rng);
            let ids: Vec<&str> = v.value.as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
            assert!(!ids.is_empty());
            assert!(ids.iter().all(|id| ["b1", "b2"].contains(id)));
            assert_eq!(v.references.len(), ids.len());
        }
    }

    #[test]
    fn seed_determinism() {
        let s = fixture_spec();
        let store = customer_store(&["c1", "c2", "c3"], &["c4"]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            s.per_operation
                .values()
                .flat_map(|set| set.per_parameter.values())
                .map(|d| sample_value(d, &store, &mut rng).value)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn valid_and_boundary_samples_conform(seed in any::<u64>()) {
            let s = fixture_spec();
            let store = StateStore::new(10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (op, set) in &s.per_operation {
                for (name, d) in &set.per_parameter {
                    for tag in [ValueTag::ValidRandom, ValueTag::Boundary] {
                        let v = sample_value(&only(d, tag), &store, &mut rng);
                        let violations = validate(&v.value, &d.schema);
                        prop_assert!(violations.is_empty(), "{op} {name} {:?} {:?}", v.value, violations);
                    }
                }
            }
        }

        #[test]
        fn invalid_samples_violate_and_say_how(seed in any::<u64>()) {
            let s = fixture_spec();
            let store = StateStore::new(10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (op, set) in &s.per_operation {
                for (name, d) in &set.per_parameter {
                    if d.mixture.invalid_typed == 0.0 {
                        continue;
                    }
                    let v = sample_value(&only(d, ValueTag::InvalidTyped), &store, &mut rng);
                    prop_assert_eq!(v.tag, ValueTag::InvalidTyped);
                    prop_assert!(v.violation.is_some());
                    prop_assert!(!validate(&v.value, &d.schema).is_empty(), "{} {} {:?}", op, name, v.value);
                }
            }
        }

        #[test]
        fn ranges_hold_for_arbitrary_bounds(lo in -1000i64..1000, span in 0i64..1000, seed in any::<u64>()) {
            let d = int_domain(lo as f64, (lo + span) as f64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let store = StateStore::new(10);
            for tag in [ValueTag::ValidRandom, ValueTag::Boundary] {
                let v = sample_value(&only(&d, tag), &store, &mut rng);
                prop_assert!(validate(&v.value, &d.schema).is_empty());
            }
            let v = sample_value(&only(&d, ValueTag::InvalidTyped), &store, &mut rng);
            prop_assert!(!validate(&v.value, &d.schema).is_empty());
        }
    }
}
