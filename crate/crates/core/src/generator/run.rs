use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use super::{Generator, RequestPlan};
use crate::checker::{check_semantic, check_status, check_syntactic, CheckPolicy, Finding, FindingKind, Grade};
use crate::driver::{DriverError, HttpExchangeResult, Target, DEFAULT_TIMEOUT};
use crate::model::SemanticModel;
use crate::sampling::{SamplingError, SamplingSpec};
use crate::spec::ApiSpecIR;
use crate::state::{
    apply_effect, predict_status, widen_for_racing_delete, EffectContext, Mode, StateStore,
    StatusPrediction, DEFAULT_CAPACITY,
};
use crate::trace::{ResponseRecord, SinkError, TraceEvent, TraceSink};

/// Findings kept verbatim in a result; counts are always exact.
const KEPT_FINDINGS: usize = 10_000;

/// How often progress is reported.
const PROGRESS_INTERVAL: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Concurrent mode only; sequential runs use 1.
    pub max_in_flight: usize,
    /// `None` runs until another criterion stops it.
    pub duration_limit: Option<Duration>,
    /// Number of requests after which the run stops as if timed out.
    pub max_requests: Option<u64>,
    pub stop_on_error: bool,
    pub master_seed: u64,
    pub timeout: Duration,
    pub warmup: usize,
    pub policy: CheckPolicy,
    pub state_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Sequential,
            max_in_flight: 1,
            duration_limit: Some(Duration::from_secs(60)),
            max_requests: None,
            stop_on_error: false,
            master_seed: 0,
            timeout: DEFAULT_TIMEOUT,
            warmup: 20,
            policy: CheckPolicy::default(),
            state_capacity: DEFAULT_CAPACITY,
        }
    }
}

impl RunConfig {
    /// Number of exchanges allowed in flight.
    pub fn window(&self) -> usize {
        match self.mode {
            Mode::Sequential => 1,
            Mode::Concurrent => self.max_in_flight.max(1),
        }
    }

    /// Prediction mode; a window of one is sequential.
    pub fn effective_mode(&self) -> Mode {
        if self.window() > 1 {
            Mode::Concurrent
        } else {
            Mode::Sequential
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Timeout,
    ErrorDetected,
    OperatorStop,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub requests: u64,
    pub per_operation: BTreeMap<String, u64>,
    pub findings: BTreeMap<Grade, u64>,
    pub peak_in_flight: usize,
}

impl Counters {
    pub fn findings_total(&self) -> u64 {
        self.findings.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub verdict: Verdict,
    pub stop_reason: StopReason,
    pub counters: Counters,
    /// In trace order, truncated to the first ten thousand.
    pub findings: Vec<Finding>,
    pub trace_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    EndpointUnreachable(#[from] DriverError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Requests an orderly stop from another thread.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Periodic progress report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub elapsed: Duration,
    pub requests: u64,
    pub requests_per_second: f64,
    pub findings: u64,
    pub in_flight: usize,
}

/// One exercise run over a target.
pub struct Runner<'a> {
    pub spec: &'a ApiSpecIR,
    pub model: &'a SemanticModel,
    pub sampling: &'a SamplingSpec,
    pub config: RunConfig,
    pub target: &'a dyn Target,
    pub stop: StopHandle,
    pub progress: Option<Sender<Progress>>,
}

struct Pending {
    plan: RequestPlan,
    prediction: StatusPrediction,
    dispatch_epoch: u64,
}

struct Loop<'r, 'a> {
    runner: &'r Runner<'a>,
    store: StateStore,
    counters: Counters,
    findings: Vec<Finding>,
    failed: bool,
    next_event: u64,
    started: Instant,
    last_progress: Instant,
}

impl<'a> Runner<'a> {
    pub fn new(
        spec: &'a ApiSpecIR,
        model: &'a SemanticModel,
        sampling: &'a SamplingSpec,
        config: RunConfig,
        target: &'a dyn Target,
    ) -> Runner<'a> {
        Runner {
            spec,
            model,
            sampling,
            config,
            target,
            stop: StopHandle::default(),
            progress: None,
        }
    }

    /// Probes the endpoint, then generates, dispatches and checks requests
    /// until a stop criterion fires.
    pub fn run(&self, sink: &mut dyn TraceSink) -> Result<RunResult, RunError> {
        self.target.probe(self.config.timeout)?;
        let mut generator = Generator::new(
            self.spec,
            self.model,
            self.sampling,
            self.config.master_seed,
            self.config.warmup,
        )?;
        let mut state = Loop {
            runner: self,
            store: StateStore::new(self.config.state_capacity),
            counters: Counters::default(),
            findings: Vec::new(),
            failed: false,
            next_event: 1,
            started: Instant::now(),
            last_progress: Instant::now(),
        };
        let window = self.config.window();
        let outcome = if window == 1 {
            state.sequential(&mut generator, sink)
        } else {
            thread::scope(|scope| {
                let (jobs_tx, jobs_rx) = bounded::<(u64, crate::driver::WireRequest)>(window);
                let (done_tx, done_rx) = unbounded::<(u64, HttpExchangeResult)>();
                for _ in 0..window {
                    let jobs_rx: Receiver<_> = jobs_rx.clone();
                    let done_tx = done_tx.clone();
                    let target = self.target;
                    let timeout = self.config.timeout;
                    scope.spawn(move || {
                        for (id, wire) in jobs_rx {
                            if done_tx.send((id, target.execute(&wire, timeout))).is_err() {
                                break;
                            }
                        }
                    });
                }
                drop(done_tx);
                state.concurrent(&mut generator, sink, window, jobs_tx, done_rx)
            })
        };
        let (stop_reason, sink_error) = match outcome {
            Ok(reason) => (reason, None),
            Err(e) => (StopReason::OperatorStop, Some(e.to_string())),
        };
        let sink_error = sink_error.or_else(|| sink.finish().err().map(|e| e.to_string()));
        let stop_reason = if sink_error.is_some() { StopReason::OperatorStop } else { stop_reason };
        state.report(true);
        Ok(RunResult {
            verdict: if state.failed { Verdict::Failed } else { Verdict::Passed },
            stop_reason,
            counters: state.counters,
            findings: state.findings,
            trace_ref: sink.reference(),
            sink_error,
        })
    }
}

impl Loop<'_, '_> {
    fn stop_before_dispatch(&self) -> Option<StopReason> {
        let config = &self.runner.config;
        if self.runner.stop.is_stopped() {
            return Some(StopReason::OperatorStop);
        }
        if config.stop_on_error && self.failed {
            return Some(StopReason::ErrorDetected);
        }
        if config.duration_limit.is_some_and(|limit| self.started.elapsed() >= limit) {
            return Some(StopReason::Timeout);
        }
        if config.max_requests.is_some_and(|n| self.counters.requests >= n) {
            return Some(StopReason::Timeout);
        }
        None
    }

    fn dispatch(&mut self, generator: &mut Generator<'_>, in_flight: &BTreeMap<u64, Pending>) -> Pending {
        let plan = generator.next_plan(&self.store);
        let op = self.runner.spec.operation(&plan.binding.operation).expect("known operation");
        let others: Vec<&RequestPlan> = in_flight.values().map(|p| &p.plan).collect();
        let prediction = predict_status(&plan, op, &self.store, self.runner.config.effective_mode(), &others);
        self.counters.requests += 1;
        *self.counters.per_operation.entry(plan.binding.operation.clone()).or_default() += 1;
        Pending {
            plan,
            prediction,
            dispatch_epoch: self.store.epoch(),
        }
    }

    fn complete(&mut self, pending: Pending, response: HttpExchangeResult, sink: &mut dyn TraceSink) -> Result<(), SinkError> {
        let runner = self.runner;
        let event_id = self.next_event;
        self.next_event += 1;
        let plan = &pending.plan;
        let op = runner.spec.operation(&plan.binding.operation).expect("known operation");
        let key = plan.binding.operation.as_str();
        let mut findings = Vec::new();
        match response.status {
            None => {
                let error = response.transport_error.as_ref().map_or(String::new(), |e| e.to_string());
                findings.push(Finding::new(FindingKind::NoResponse, key, format!("no response: {error}")));
            }
            Some(status) => {
                findings.extend(check_status(status, op, &runner.config.policy));
                findings.extend(check_syntactic(&response, op));
                if status < 500 {
                    findings.extend(check_semantic(status, &pending.prediction, key, &runner.config.policy));
                }
            }
        }
        let ctx = EffectContext {
            model: runner.model,
            threshold: runner.sampling.config.threshold,
        };
        if let Err(e) = apply_effect(plan, &response, &mut self.store, ctx, event_id) {
            findings.push(Finding::new(FindingKind::IdExtractionFailure, key, e.to_string()));
        }
        for f in &mut findings {
            f.exchange_ref = event_id;
            *self.counters.findings.entry(f.grade).or_default() += 1;
            self.failed |= f.grade == Grade::Error;
        }
        let event = TraceEvent {
            event_id,
            plan: pending.plan,
            response: ResponseRecord::from_result(&response),
            findings,
            dispatch_epoch: pending.dispatch_epoch,
            completion_epoch: self.store.epoch(),
        };
        let room = KEPT_FINDINGS.saturating_sub(self.findings.len());
        self.findings.extend(event.findings.iter().take(room).cloned());
        let recorded = sink.record(&event);
        self.report(false);
        recorded
    }

    fn report(&mut self, last: bool) {
        let Some(tx) = &self.runner.progress else { return };
        if !last && self.last_progress.elapsed() < PROGRESS_INTERVAL {
            return;
        }
        self.last_progress = Instant::now();
        let elapsed = self.started.elapsed();
        let _ = tx.send(Progress {
            elapsed,
            requests: self.counters.requests,
            requests_per_second: self.counters.requests as f64 / elapsed.as_secs_f64().max(1e-9),
            findings: self.counters.findings_total(),
            in_flight: 0,
        });
    }

    fn sequential(&mut self, generator: &mut Generator<'_>, sink: &mut dyn TraceSink) -> Result<StopReason, SinkError> {
        let none = BTreeMap::new();
        loop {
            if let Some(reason) = self.stop_before_dispatch() {
                return Ok(reason);
            }
            let pending = self.dispatch(generator, &none);
            self.counters.peak_in_flight = self.counters.peak_in_flight.max(1);
            let response = self
                .runner
                .target
                .execute(&pending.plan.to_wire(), self.runner.config.timeout);
            self.complete(pending, response, sink)?;
        }
    }

    fn concurrent(
        &mut self,
        generator: &mut Generator<'_>,
        sink: &mut dyn TraceSink,
        window: usize,
        jobs: Sender<(u64, crate::driver::WireRequest)>,
        done: Receiver<(u64, HttpExchangeResult)>,
    ) -> Result<StopReason, SinkError> {
        let mut in_flight: BTreeMap<u64, Pending> = BTreeMap::new();
        let mut stopped = None;
        let mut sink_error = None;
        loop {
            while stopped.is_none() && in_flight.len() < window {
                if let Some(reason) = self.stop_before_dispatch() {
                    stopped = Some(reason);
                    break;
                }
                let pending = self.dispatch(generator, &in_flight);
                if pending.plan.binding.crud_kind == crate::model::CrudKind::Delete {
                    if let Some(deleted) = &pending.plan.target {
                        for other in in_flight.values_mut() {
                            widen_for_racing_delete(&mut other.prediction, &other.plan, deleted);
                        }
                    }
                }
                let id = pending.plan.plan_id;
                let wire = pending.plan.to_wire();
                in_flight.insert(id, pending);
                self.counters.peak_in_flight = self.counters.peak_in_flight.max(in_flight.len());
                jobs.send((id, wire)).expect("workers outlive the coordinator loop");
            }
            if in_flight.is_empty() {
                break;
            }
            let (id, response) = done.recv().expect("a worker holds every in-flight request");
            let pending = in_flight.remove(&id).expect("completion of a dispatched plan");
            if sink_error.is_none() {
                if let Err(e) = self.complete(pending, response, sink) {
                    sink_error = Some(e);
                    stopped = Some(StopReason::OperatorStop);
                }
            }
        }
        drop(jobs);
        match sink_error {
            Some(e) => Err(e),
            None => Ok(stopped.unwrap_or(StopReason::Timeout)),
        }
    }
}

/// Runs with a window of one.
pub fn run_sequential(
    spec: &ApiSpecIR,
    model: &SemanticModel,
    sampling: &SamplingSpec,
    config: RunConfig,
    target: &dyn Target,
    sink: &mut dyn TraceSink,
) -> Result<RunResult, RunError> {
    let config = RunConfig {
        mode: Mode::Sequential,
        max_in_flight: 1,
        ..config
    };
    Runner::new(spec, model, sampling, config, target).run(sink)
}

/// Runs with up to `config.max_in_flight` exchanges in flight.
pub fn run_concurrent(
    spec: &ApiSpecIR,
    model: &SemanticModel,
    sampling: &SamplingSpec,
    config: RunConfig,
    target: &dyn Target,
    sink: &mut dyn TraceSink,
) -> Result<RunResult, RunError> {
    let config = RunConfig {
        mode: Mode::Concurrent,
        ..config
    };
    Runner::new(spec, model, sampling, config, target).run(sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::InProcessTarget;
    use crate::model::infer_model;
    use crate::sampling::{build_sampling_spec, SamplingConfig};
    use crate::spec::{load_spec, Format};
    use crate::trace::{CountingSink, MemorySink};
    use rexer_bookshop::{BugId, Bookshop, BookshopConfig};
    use std::sync::atomic::AtomicUsize;

    struct Fixture {
        spec: ApiSpecIR,
        model: SemanticModel,
        sampling: SamplingSpec,
    }

    fn fixture() -> Fixture {
        let spec = load_spec(rexer_bookshop::FIXTURE_SPEC.as_bytes(), Format::Yaml).unwrap();
        let model = infer_model(&spec);
        let sampling = build_sampling_spec(&spec, &model, &SamplingConfig::default());
        Fixture { spec, model, sampling }
    }

    fn shop(config: BookshopConfig) -> InProcessTarget {
        let shop = Arc::new(Bookshop::new(config));
        InProcessTarget::new(move |req| shop.handle(req))
    }

    fn budget(n: u64) -> RunConfig {
        RunConfig {
            duration_limit: None,
            max_requests: Some(n),
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_duration_sends_nothing() {
        let f = fixture();
        let target = shop(BookshopConfig::default());
        let config = RunConfig {
            duration_limit: Some(Duration::ZERO),
            ..RunConfig::default()
        };
        let mut sink = MemorySink::default();
        let result = run_sequential(&f.spec, &f.model, &f.sampling, config, &target, &mut sink).unwrap();
        assert_eq!(result.counters.requests, 0);
        assert_eq!(result.verdict, Verdict::Passed);
        assert_eq!(result.stop_reason, StopReason::Timeout);
        assert!(sink.events.is_empty());
    }

    #[test]
    fn clean_fixture_run_passes() {
        let f = fixture();
        let target = shop(BookshopConfig::default());
        let mut sink = MemorySink::default();
        let result = run_sequential(&f.spec, &f.model, &f.sampling, budget(3_000), &target, &mut sink).unwrap();
        let errors: Vec<_> = result.findings.iter().filter(|f| f.grade == Grade::Error).collect();
        assert!(errors.is_empty(), "{errors:#?}");
        assert_eq!(result.verdict, Verdict::Passed);
        assert_eq!(result.counters.requests, 3_000);
        assert_eq!(sink.events.len(), 3_000);
        assert!(sink.events.iter().enumerate().all(|(i, e)| e.event_id == i as u64 + 1));
        assert!(sink.events.iter().all(|e| e.completion_epoch >= e.dispatch_epoch));
    }

    #[test]
    fn stop_on_error_ends_on_the_failing_exchange() {
        let f = fixture();
        let target = shop(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500));
        let config = RunConfig {
            stop_on_error: true,
            ..budget(20_000)
        };
        let mut sink = MemorySink::default();
        let result = run_sequential(&f.spec, &f.model, &f.sampling, config, &target, &mut sink).unwrap();
        assert_eq!(result.verdict, Verdict::Failed);
        assert_eq!(result.stop_reason, StopReason::ErrorDetected);
        let last = sink.events.last().unwrap();
        assert!(last.findings.iter().any(|f| f.kind == FindingKind::ServerError5xx));
        assert!(sink.events[..sink.events.len() - 1]
            .iter()
            .all(|e| e.findings.iter().all(|f| f.grade != Grade::Error)));
    }

    struct FailingSink;

    impl TraceSink for FailingSink {
        fn record(&mut self, _event: &TraceEvent) -> Result<(), SinkError> {
            Err(SinkError::Io(std::io::Error::other("no space left on device")))
        }

        fn reference(&self) -> String {
            "failing".into()
        }
    }

    #[test]
    fn sink_failure_is_an_operator_stop() {
        let f = fixture();
        let target = shop(BookshopConfig::default());
        for config in [budget(50), RunConfig { mode: Mode::Concurrent, max_in_flight: 4, ..budget(50) }] {
            let result = Runner::new(&f.spec, &f.model, &f.sampling, config, &target)
                .run(&mut FailingSink)
                .unwrap();
            assert_eq!(result.stop_reason, StopReason::OperatorStop);
            assert!(result.sink_error.unwrap().contains("no space"));
        }
    }

    #[test]
    fn stop_handle_halts_the_run() {
        let f = fixture();
        let target = shop(BookshopConfig::default());
        let runner = Runner::new(&f.spec, &f.model, &f.sampling, RunConfig { duration_limit: None, ..RunConfig::default() }, &target);
        runner.stop.stop();
        let result = runner.run(&mut CountingSink::default()).unwrap();
        assert_eq!(result.stop_reason, StopReason::OperatorStop);
        assert_eq!(result.counters.requests, 0);
    }

    #[test]
    fn window_of_one_matches_sequential() {
        let f = fixture();
        let plans = |mode| {
            let target = shop(BookshopConfig::default());
            let config = RunConfig { mode, max_in_flight: 1, master_seed: 17, ..budget(400) };
            let mut sink = MemorySink::default();
            Runner::new(&f.spec, &f.model, &f.sampling, config, &target).run(&mut sink).unwrap();
            sink.events.iter().map(|e| serde_json::to_string(&e.plan).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(plans(Mode::Sequential), plans(Mode::Concurrent));
    }

    struct Counted {
        inner: InProcessTarget,
        now: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Target for Counted {
        fn execute(&self, request: &crate::driver::WireRequest, timeout: Duration) -> HttpExchangeResult {
            let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(n, Ordering::SeqCst);
            thread::sleep(Duration::from_micros(200));
            let r = self.inner.execute(request, timeout);
            self.now.fetch_sub(1, Ordering::SeqCst);
            r
        }

        fn probe(&self, _timeout: Duration) -> Result<(), DriverError> {
            Ok(())
        }

        fn describe(&self) -> String {
            "counted".into()
        }
    }

    #[test]
    fn concurrent_run_respects_window_and_stays_clean() {
        let f = fixture();
        let target = Counted {
            inner: shop(BookshopConfig::default()),
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        };
        let config = RunConfig { max_in_flight: 8, master_seed: 3, ..budget(3_000) };
        let mut sink = MemorySink::default();
        let result = run_concurrent(&f.spec, &f.model, &f.sampling, config, &target, &mut sink).unwrap();
        let peak = target.peak.load(Ordering::SeqCst);
        assert!(peak <= 8 && peak > 1, "peak {peak}");
        assert!(result.counters.peak_in_flight <= 8 && result.counters.peak_in_flight > 1);
        let errors: Vec<_> = result.findings.iter().filter(|f| f.grade == Grade::Error).collect();
        assert!(errors.is_empty(), "{errors:#?}");
        assert_eq!(sink.events.len(), 3_000);
    }

    #[test]
    fn unreachable_endpoint_is_an_error() {
        let f = fixture();
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let target = crate::driver::NetworkTarget::new(&format!("http://127.0.0.1:{port}"), Default::default()).unwrap();
        let err = run_sequential(&f.spec, &f.model, &f.sampling, budget(5), &target, &mut CountingSink::default()).unwrap_err();
        assert!(matches!(err, RunError::EndpointUnreachable(_)));
    }
}
