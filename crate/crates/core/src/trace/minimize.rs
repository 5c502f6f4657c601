use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::replay::{replay_attempts, ReplayOptions, ReplayOutcome};
use super::script::bind_symbols;
use super::TraceEvent;
use crate::driver::Target;
use crate::model::SemanticModel;
use crate::spec::ApiSpecIR;
use crate::state::Mode;

/// Decides whether a candidate trace still shows the failure. The last
/// event of every candidate is the failing one.
pub trait Oracle {
    fn reproduces(&mut self, events: &[TraceEvent]) -> bool;
}

impl<F: FnMut(&[TraceEvent]) -> bool> Oracle for F {
    fn reproduces(&mut self, events: &[TraceEvent]) -> bool {
        self(events)
    }
}

/// Replays the symbolic script of each candidate against a target, after a
/// reset.
pub struct ReplayOracle<'a> {
    pub spec: &'a ApiSpecIR,
    pub model: &'a SemanticModel,
    pub target: &'a dyn Target,
    pub reset: Box<dyn FnMut() + 'a>,
    pub options: ReplayOptions,
    pub mode: Mode,
    pub max_in_flight: usize,
    /// A candidate reproduces if any of this many replays does.
    pub attempts: usize,
}

impl Oracle for ReplayOracle<'_> {
    fn reproduces(&mut self, events: &[TraceEvent]) -> bool {
        let mut script = bind_symbols(events, self.model, self.spec);
        script.mode = self.mode;
        script.max_in_flight = self.max_in_flight;
        let report = replay_attempts(&script, self.target, &self.options, self.attempts, &mut *self.reset);
        report.outcome == ReplayOutcome::Reproduced
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Oracle calls allowed before returning the best reduction so far.
    pub budget: usize,
    /// Tries on the full prefix before giving up.
    pub confirm_tries: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            budget: 500,
            confirm_tries: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Minimized {
    pub events: Vec<TraceEvent>,
    pub original_len: usize,
    pub oracle_calls: usize,
    /// False when the budget ran out before 1-minimality was shown.
    pub proven_minimal: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MinimizeError {
    #[error("event {0} is not in the trace")]
    UnknownEvent(u64),
    #[error("the failure did not reproduce in {tries} replays of the full trace")]
    NotReproducible { tries: usize },
}

struct Search<'o> {
    prefix: Vec<TraceEvent>,
    /// Per prefix index (failing event excluded): indices it consumes from.
    producers: Vec<BTreeSet<usize>>,
    oracle: &'o mut dyn Oracle,
    cache: HashMap<Vec<usize>, bool>,
    calls: usize,
    budget: usize,
}

impl Search<'_> {
    /// Kept indices minus events whose producers are gone.
    fn closure(&self, kept: &[usize]) -> Vec<usize> {
        let wanted: BTreeSet<usize> = kept.iter().copied().collect();
        let mut out: BTreeSet<usize> = BTreeSet::new();
        for i in wanted {
            if self.producers[i].is_subset(&out) {
                out.insert(i);
            }
        }
        out.into_iter().collect()
    }

    fn exhausted(&self) -> bool {
        self.calls >= self.budget
    }

    /// Tests `kept` with consumers of dropped producers dropped too.
    fn test(&mut self, kept: &[usize]) -> bool {
        let closed = self.closure(kept);
        self.test_exact(closed)
    }

    fn test_exact(&mut self, kept: Vec<usize>) -> bool {
        if let Some(&hit) = self.cache.get(&kept) {
            return hit;
        }
        if self.exhausted() {
            return false;
        }
        self.calls += 1;
        let failing = self.prefix.len() - 1;
        let events: Vec<TraceEvent> = kept
            .iter()
            .chain(std::iter::once(&failing))
            .map(|&i| self.prefix[i].clone())
            .collect();
        let result = self.oracle.reproduces(&events);
        self.cache.insert(kept, result);
        result
    }

    /// Delta debugging over producer/consumer groups.
    fn ddmin(&mut self, mut current: Vec<usize>) -> Vec<usize> {
        if self.test(&[]) {
            return Vec::new();
        }
        let mut n = 2;
        while current.len() >= 2 && !self.exhausted() {
            let chunks = split(&current, n);
            let mut reduced = false;
            for chunk in &chunks {
                if self.test(chunk) {
                    current = self.closure(chunk);
                    n = 2;
                    reduced = true;
                    break;
                }
            }
            if !reduced && n > 2 {
                for chunk in &chunks {
                    let complement: Vec<usize> = current.iter().filter(|i| !chunk.contains(i)).copied().collect();
                    if self.test(&complement) {
                        current = self.closure(&complement);
                        n = (n - 1).max(2);
                        reduced = true;
                        break;
                    }
                }
            }
            if !reduced {
                if n >= current.len() {
                    break;
                }
                n = (2 * n).min(current.len());
            }
        }
        self.closure(&current)
    }

    /// Removes single events, producers included, until no removal keeps
    /// the failure.
    fn one_minimal(&mut self, mut current: Vec<usize>) -> (Vec<usize>, bool) {
        'outer: loop {
            for &i in &current {
                let without: Vec<usize> = current.iter().copied().filter(|&j| j != i).collect();
                if self.exhausted() && !self.cache.contains_key(&without) {
                    return (current, false);
                }
                if self.test_exact(without.clone()) {
                    current = without;
                    continue 'outer;
                }
            }
            return (current, true);
        }
    }
}

fn split(items: &[usize], n: usize) -> Vec<Vec<usize>> {
    let n = n.min(items.len()).max(1);
    let mut chunks = Vec::with_capacity(n);
    let mut start = 0;
    for k in 0..n {
        let end = start + (items.len() - start) / (n - k);
        chunks.push(items[start..end].to_vec());
        start = end;
    }
    chunks
}

/// Reduces the trace prefix ending at `failing_event` to a 1-minimal
/// subsequence that still reproduces. The delta debugging phase drops a
/// producer together with its consumers; the final pass removes single
/// events.
pub fn minimize(
    trace: &[TraceEvent],
    failing_event: u64,
    model: &SemanticModel,
    spec: &ApiSpecIR,
    oracle: &mut dyn Oracle,
    options: &MinimizeOptions,
) -> Result<Minimized, MinimizeError> {
    let end = trace
        .iter()
        .position(|e| e.event_id == failing_event)
        .ok_or(MinimizeError::UnknownEvent(failing_event))?;
    let prefix: Vec<TraceEvent> = trace[..=end].to_vec();
    let failing = prefix.len() - 1;

    let script = bind_symbols(&prefix, model, spec);
    let index_of: BTreeMap<u64, usize> = prefix.iter().enumerate().map(|(i, e)| (e.event_id, i)).collect();
    let step_index = |step: usize| index_of[&script.steps[step - 1].source_event];
    let mut producers = vec![BTreeSet::new(); prefix.len()];
    for b in &script.bindings {
        let p = step_index(b.producer.step);
        for c in &b.consumers {
            producers[step_index(c.step)].insert(p);
        }
    }
    let mut search = Search {
        prefix,
        producers,
        oracle,
        cache: HashMap::new(),
        calls: 0,
        budget: options.budget,
    };
    let all: Vec<usize> = (0..failing).collect();
    let mut confirmed = false;
    for _ in 0..options.confirm_tries.max(1) {
        search.calls += 1;
        let events = search.prefix.clone();
        if search.oracle.reproduces(&events) {
            confirmed = true;
            break;
        }
    }
    if !confirmed {
        return Err(MinimizeError::NotReproducible {
            tries: options.confirm_tries.max(1),
        });
    }
    search.cache.insert(search.closure(&all), true);

    let reduced = search.ddmin(all);
    let (kept, proven) = search.one_minimal(reduced);
    let events = kept
        .iter()
        .chain(std::iter::once(&failing))
        .map(|&i| search.prefix[i].clone())
        .collect();
    Ok(Minimized {
        events,
        original_len: failing + 1,
        oracle_calls: search.calls,
        proven_minimal: proven,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::infer_model;
    use crate::spec::{load_spec, Format};
    use crate::trace::script;
    use crate::trace::tests::event;
    use proptest::prelude::*;

    fn fixture() -> (ApiSpecIR, SemanticModel) {
        let spec = load_spec(rexer_bookshop::FIXTURE_SPEC.as_bytes(), Format::Yaml).unwrap();
        let model = infer_model(&spec);
        (spec, model)
    }

    fn trace(n: u64) -> Vec<TraceEvent> {
        (1..=n).map(event).collect()
    }

    /// Reproduces when every event of `needed` is present.
    fn needs(needed: BTreeSet<u64>) -> impl FnMut(&[TraceEvent]) -> bool {
        move |events: &[TraceEvent]| {
            let ids: BTreeSet<u64> = events.iter().map(|e| e.event_id).collect();
            needed.is_subset(&ids)
        }
    }

    #[test]
    fn finds_the_two_needed_events() {
        let (spec, model) = fixture();
        let mut oracle = needs([7, 31, 50].into());
        let result = minimize(&trace(50), 50, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap();
        let ids: Vec<u64> = result.events.iter().map(|e| e.event_id).collect();
        assert_eq!(ids, [7, 31, 50]);
        assert!(result.proven_minimal);
        assert!(result.oracle_calls <= 500);
    }

    #[test]
    fn needed_producer_is_kept() {
        let (spec, model) = fixture();
        let trace = vec![
            event(1),
            script::tests::create_customer(2, "c5"),
            event(3),
            script::tests::get_customer(4, "c5"),
        ];
        let mut oracle = |events: &[TraceEvent]| events.iter().any(|e| e.event_id == 2);
        let result = minimize(&trace, 4, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap();
        let ids: Vec<u64> = result.events.iter().map(|e| e.event_id).collect();
        assert_eq!(ids, [2, 4]);
        assert!(result.proven_minimal);
    }

    #[test]
    fn removable_producer_is_dropped() {
        let (spec, model) = fixture();
        let trace = vec![
            script::tests::create_customer(1, "c5"),
            event(2),
            script::tests::get_customer(3, "c5"),
        ];
        let mut oracle = |events: &[TraceEvent]| events.iter().any(|e| e.event_id == 2);
        let result = minimize(&trace, 3, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap();
        let ids: Vec<u64> = result.events.iter().map(|e| e.event_id).collect();
        assert_eq!(ids, [2, 3]);
        assert!(result.proven_minimal);
    }

    #[test]
    fn single_event_trace_is_unchanged() {
        let (spec, model) = fixture();
        let mut oracle = needs([1].into());
        let result = minimize(&trace(1), 1, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap();
        assert_eq!(result.events, trace(1));
    }

    #[test]
    fn flaky_failures_are_not_reproducible() {
        let (spec, model) = fixture();
        let mut calls = 0;
        let mut oracle = |_: &[TraceEvent]| {
            calls += 1;
            false
        };
        let err = minimize(&trace(10), 10, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap_err();
        assert_eq!(err, MinimizeError::NotReproducible { tries: 3 });
        assert_eq!(calls, 3);
    }

    #[test]
    fn unknown_event_is_rejected() {
        let (spec, model) = fixture();
        let mut oracle = needs(BTreeSet::new());
        let err = minimize(&trace(3), 9, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap_err();
        assert_eq!(err, MinimizeError::UnknownEvent(9));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let (spec, model) = fixture();
        let needed: BTreeSet<u64> = (1..=40).step_by(3).chain([40]).collect();
        let mut oracle = needs(needed);
        let options = MinimizeOptions { budget: 10, confirm_tries: 3 };
        let result = minimize(&trace(40), 40, &model, &spec, &mut oracle, &options).unwrap();
        assert!(!result.proven_minimal);
        assert!(result.oracle_calls <= 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn results_are_one_minimal(
            n in 1u64..40,
            picks in prop::collection::btree_set(1u64..40, 0..6),
        ) {
            let (spec, model) = fixture();
            let needed: BTreeSet<u64> = picks.into_iter().filter(|&p| p < n).chain([n]).collect();
            let mut oracle = needs(needed.clone());
            let result = minimize(&trace(n), n, &model, &spec, &mut oracle, &MinimizeOptions::default()).unwrap();
            let ids: BTreeSet<u64> = result.events.iter().map(|e| e.event_id).collect();
            prop_assert_eq!(&ids, &needed);
            prop_assert!(result.proven_minimal);
            for e in &result.events[..result.events.len() - 1] {
                let without: Vec<TraceEvent> = result.events.iter().filter(|x| x.event_id != e.event_id).cloned().collect();
                prop_assert!(!oracle(&without));
            }
        }
    }
}
