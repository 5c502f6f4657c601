use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Serialize;
use serde_json::Value;

use super::script::{placeholder, symbols_in_step, RecreateScript, ScriptStep};
use crate::driver::{HttpExchangeResult, Target, WireRequest, DEFAULT_TIMEOUT};
use crate::sampling::id_text;
use crate::state::Mode;

const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayOutcome {
    Reproduced,
    NotReproduced,
    Error,
}

impl ReplayOutcome {
    /// Process exit status for CI use.
    pub fn exit_code(self) -> i32 {
        match self {
            ReplayOutcome::Reproduced => 0,
            ReplayOutcome::NotReproduced => 1,
            ReplayOutcome::Error => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("step {step} needs `{variable}`, but step {producer} returned nothing at {path}")]
    SymbolResolutionFailure {
        variable: String,
        step: usize,
        producer: usize,
        path: String,
    },
    #[error("script has no expected failure")]
    NoExpectedFailure,
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub timeout: Duration,
    /// Overrides the script's window when set.
    pub max_in_flight: Option<usize>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub outcome: ReplayOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Status of each step; `None` for a transport failure or a step not run.
    pub statuses: Vec<Option<u16>>,
    /// Replays performed.
    pub attempts: usize,
}

impl ReplayReport {
    fn error(e: ReplayError, steps: usize) -> ReplayReport {
        ReplayReport {
            outcome: ReplayOutcome::Error,
            error: Some(e.to_string()),
            statuses: vec![None; steps],
            attempts: 1,
        }
    }
}

/// Value at a `$.a.b[0]` path.
fn at_path<'v>(value: &'v Value, path: &str) -> Option<&'v Value> {
    let rest = path.strip_prefix('$')?;
    let mut current = value;
    for part in rest.split('.').filter(|p| !p.is_empty()) {
        let (key, indices) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if !key.is_empty() {
            current = current.get(key)?;
        }
        for index in indices.split('[').filter(|s| !s.is_empty()) {
            let i: usize = index.trim_end_matches(']').parse().ok()?;
            current = current.get(i)?;
        }
    }
    Some(current)
}

struct Resolver<'s> {
    script: &'s RecreateScript,
    values: BTreeMap<String, Option<Value>>,
}

impl Resolver<'_> {
    fn text(&self, variable: &str) -> Option<String> {
        self.values.get(variable)?.as_ref().and_then(id_text)
    }

    fn resolve_str(&self, s: &str, encode: bool) -> String {
        let mut out = s.to_string();
        for variable in self.values.keys() {
            if let Some(text) = self.text(variable) {
                let text = if encode {
                    utf8_percent_encode(&text, COMPONENT).to_string()
                } else {
                    text
                };
                out = out.replace(&placeholder(variable), &text);
            }
        }
        out
    }

    fn resolve_value(&self, v: &Value) -> Value {
        match v {
            Value::String(s) => {
                let whole = self
                    .values
                    .iter()
                    .find(|(name, _)| *s == placeholder(name))
                    .and_then(|(_, value)| value.clone());
                whole.unwrap_or_else(|| Value::String(self.resolve_str(s, false)))
            }
            Value::Array(items) => Value::Array(items.iter().map(|i| self.resolve_value(i)).collect()),
            Value::Object(fields) => Value::Object(
                fields
                    .iter()
                    .map(|(k, v)| (k.clone(), self.resolve_value(v)))
                    .collect(),
            ),
            other => other.clone(),
        }
    }

    /// Concrete request for a step whose producers have all completed.
    fn request(&self, step: &ScriptStep) -> Result<WireRequest, ReplayError> {
        for variable in symbols_in_step(step) {
            let Some(binding) = self.script.bindings.iter().find(|b| b.variable == variable) else {
                continue;
            };
            if self.text(&variable).is_none() {
                return Err(ReplayError::SymbolResolutionFailure {
                    variable,
                    step: step.step,
                    producer: binding.producer.step,
                    path: binding.producer.path.clone(),
                });
            }
        }
        Ok(WireRequest {
            method: http::Method::from_bytes(step.method.as_str().as_bytes()).expect("standard method"),
            target: self.resolve_str(&step.url, true),
            headers: step
                .headers
                .iter()
                .map(|(k, v)| (k.clone(), self.resolve_str(v, false)))
                .collect(),
            body: step
                .body
                .as_ref()
                .map(|b| serde_json::to_vec(&self.resolve_value(b)).expect("json serializes")),
        })
    }

    fn absorb(&mut self, step: usize, response: &HttpExchangeResult) {
        for b in self.script.bindings.iter().filter(|b| b.producer.step == step) {
            let value = response
                .is_success()
                .then_some(response.json.as_ref())
                .flatten()
                .and_then(|body| at_path(body, &b.producer.path))
                .filter(|v| id_text(v).is_some())
                .cloned();
            self.values.insert(b.variable.clone(), value);
        }
    }
}

/// Runs the script once and evaluates its expected failure on the last
/// step.
pub fn replay(script: &RecreateScript, target: &dyn Target, options: &ReplayOptions) -> ReplayReport {
    let n = script.steps.len();
    let Some(expected) = &script.expected_failure else {
        return ReplayReport::error(ReplayError::NoExpectedFailure, n);
    };
    if let Err(e) = target.probe(options.timeout) {
        return ReplayReport::error(ReplayError::Unreachable(e.to_string()), n);
    }
    let mut resolver = Resolver {
        script,
        values: BTreeMap::new(),
    };
    let window = match (options.max_in_flight, script.mode) {
        (Some(m), _) => m.max(1),
        (None, Mode::Sequential) => 1,
        (None, Mode::Concurrent) => script.max_in_flight.max(1),
    };
    let mut statuses = vec![None; n];
    let last = expected.step.min(n);
    let body = if window == 1 || last <= 2 {
        sequential(script, target, options, &mut resolver, &mut statuses, last)
    } else {
        concurrent(script, target, options, &mut resolver, &mut statuses, last, window)
    };
    match body {
        Ok(response) => ReplayReport {
            outcome: if expected.matches(&response) {
                ReplayOutcome::Reproduced
            } else {
                ReplayOutcome::NotReproduced
            },
            error: None,
            statuses,
            attempts: 1,
        },
        Err(e) => ReplayReport {
            outcome: ReplayOutcome::Error,
            error: Some(e.to_string()),
            statuses,
            attempts: 1,
        },
    }
}

/// Replays up to `attempts` times, calling `reset` before each, and stops
/// at the first reproduction.
pub fn replay_attempts(
    script: &RecreateScript,
    target: &dyn Target,
    options: &ReplayOptions,
    attempts: usize,
    reset: &mut dyn FnMut(),
) -> ReplayReport {
    let mut report = None;
    for attempt in 1..=attempts.max(1) {
        reset();
        let mut r = replay(script, target, options);
        r.attempts = attempt;
        let done = r.outcome != ReplayOutcome::NotReproduced;
        report = Some(r);
        if done {
            break;
        }
    }
    report.expect("at least one attempt")
}

fn sequential(
    script: &RecreateScript,
    target: &dyn Target,
    options: &ReplayOptions,
    resolver: &mut Resolver<'_>,
    statuses: &mut [Option<u16>],
    last: usize,
) -> Result<HttpExchangeResult, ReplayError> {
    let mut final_response = None;
    for step in &script.steps[..last] {
        let request = resolver.request(step)?;
        let response = target.execute(&request, options.timeout);
        statuses[step.step - 1] = response.status;
        resolver.absorb(step.step, &response);
        final_response = Some(response);
    }
    Ok(final_response.expect("scripts have steps"))
}

/// Runs the steps before `last` with up to `window` in flight, each after
/// its producers, then `last` alone.
fn concurrent(
    script: &RecreateScript,
    target: &dyn Target,
    options: &ReplayOptions,
    resolver: &mut Resolver<'_>,
    statuses: &mut [Option<u16>],
    last: usize,
    window: usize,
) -> Result<HttpExchangeResult, ReplayError> {
    let producers: Vec<BTreeSet<usize>> = script.steps[..last]
        .iter()
        .map(|step| {
            symbols_in_step(step)
                .iter()
                .filter_map(|v| script.bindings.iter().find(|b| &b.variable == v))
                .map(|b| b.producer.step)
                .collect()
        })
        .collect();
    let prefix = last - 1;
    thread::scope(|scope| {
        let (jobs_tx, jobs_rx) = bounded::<(usize, WireRequest)>(window);
        let (done_tx, done_rx) = unbounded::<(usize, HttpExchangeResult)>();
        for _ in 0..window {
            let jobs_rx = jobs_rx.clone();
            let done_tx = done_tx.clone();
            scope.spawn(move || {
                for (step, request) in jobs_rx {
                    if done_tx.send((step, target.execute(&request, options.timeout))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);
        let mut completed = BTreeSet::new();
        let mut in_flight = 0;
        let mut next = 0;
        let mut failure = None;
        while completed.len() < prefix && failure.is_none() {
            while next < prefix && in_flight < window && producers[next].is_subset(&completed) {
                match resolver.request(&script.steps[next]) {
                    Ok(request) => {
                        jobs_tx.send((next + 1, request)).expect("workers alive");
                        in_flight += 1;
                        next += 1;
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            if in_flight == 0 {
                break;
            }
            let (step, response) = done_rx.recv().expect("worker reply");
            in_flight -= 1;
            statuses[step - 1] = response.status;
            resolver.absorb(step, &response);
            completed.insert(step);
        }
        while in_flight > 0 {
            let (step, response) = done_rx.recv().expect("worker reply");
            in_flight -= 1;
            statuses[step - 1] = response.status;
        }
        drop(jobs_tx);
        if let Some(e) = failure {
            return Err(e);
        }
        let request = resolver.request(&script.steps[last - 1])?;
        let response = target.execute(&request, options.timeout);
        statuses[last - 1] = response.status;
        Ok(response)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::FindingKind;
    use crate::driver::InProcessTarget;
    use crate::spec::Method;
    use crate::trace::{Consumer, ExpectedFailure, Producer, SymbolicBinding, SCRIPT_VERSION};
    use crate::spec::ParamLocation;
    use rexer_bookshop::{BugId, Bookshop, BookshopConfig, IdMode};
    use serde_json::json;
    use std::sync::Arc;

    fn step(n: usize, method: Method, url: &str, body: Option<Value>) -> ScriptStep {
        ScriptStep {
            step: n,
            operation: String::new(),
            method,
            url: url.into(),
            headers: [("content-type".to_string(), "application/json".to_string())].into(),
            body,
            source_event: n as u64,
        }
    }

    fn delete_then_get() -> RecreateScript {
        RecreateScript {
            script_version: SCRIPT_VERSION,
            mode: Mode::Sequential,
            max_in_flight: 1,
            steps: vec![
                step(1, Method::Post, "/customers", Some(json!({"name": "Ann", "email": "ann@example.com"}))),
                step(2, Method::Delete, "/customers/${customer_id}", None),
                step(3, Method::Get, "/customers/${customer_id}", None),
            ],
            bindings: vec![SymbolicBinding {
                variable: "customer_id".into(),
                producer: Producer { step: 1, path: "$.customerId".into() },
                consumers: vec![
                    Consumer { step: 2, location: ParamLocation::Path, parameter: "customerId".into() },
                    Consumer { step: 3, location: ParamLocation::Path, parameter: "customerId".into() },
                ],
                recorded: json!("c1"),
            }],
            expected_failure: Some(ExpectedFailure {
                step: 3,
                kind: FindingKind::ServerError5xx,
                statuses: vec![],
                schema: None,
                json_path: None,
                detail: "500".into(),
            }),
        }
    }

    fn target(config: BookshopConfig) -> InProcessTarget {
        let shop = Arc::new(Bookshop::new(config));
        InProcessTarget::new(move |r| shop.handle(r))
    }

    #[test]
    fn reproduces_with_fresh_random_ids() {
        let script = delete_then_get();
        let buggy = target(
            BookshopConfig::default()
                .with_bug(BugId::GetMissingCustomer500)
                .with_id_mode(IdMode::Random { seed: 4 }),
        );
        let report = replay(&script, &buggy, &ReplayOptions::default());
        assert_eq!(report.outcome, ReplayOutcome::Reproduced, "{report:?}");
        assert_eq!(report.statuses, [Some(201), Some(204), Some(500)]);
        let fixed = target(BookshopConfig::default().with_id_mode(IdMode::Random { seed: 4 }));
        assert_eq!(replay(&script, &fixed, &ReplayOptions::default()).outcome, ReplayOutcome::NotReproduced);
    }

    #[test]
    fn failed_producer_is_a_resolution_failure() {
        let mut script = delete_then_get();
        script.steps[0].body = Some(json!({"name": 5}));
        let shop = target(BookshopConfig::default());
        let report = replay(&script, &shop, &ReplayOptions::default());
        assert_eq!(report.outcome, ReplayOutcome::Error);
        assert_eq!(report.outcome.exit_code(), 2);
        assert!(report.error.unwrap().contains("customer_id"));
    }

    #[test]
    fn concurrent_replay_respects_producers() {
        let mut script = delete_then_get();
        script.mode = Mode::Concurrent;
        script.max_in_flight = 4;
        let buggy = target(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500));
        let report = replay(&script, &buggy, &ReplayOptions::default());
        assert_eq!(report.outcome, ReplayOutcome::Reproduced);
    }

    #[test]
    fn paths_index_into_bodies() {
        let v = json!({"a": {"b": [1, {"c": "x"}]}});
        assert_eq!(at_path(&v, "$.a.b[1].c"), Some(&json!("x")));
        assert_eq!(at_path(&v, "$.a.z"), None);
        assert_eq!(at_path(&v, "$"), Some(&v));
    }
}
