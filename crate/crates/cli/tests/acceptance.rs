//! End-to-end acceptance criteria. Each criterion prints one PASS or FAIL
//! line; the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{code, read_report, rexer, shop, SPEC};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rexer_bookshop::{BugId, Bookshop, BookshopConfig, IdMode};
use rexer_core::checker::{FindingKind, Grade};
use rexer_core::driver::InProcessTarget;
use rexer_core::generator::{RunConfig, Runner, StopReason};
use rexer_core::model::{infer_model, CrudKind, SemanticModel};
use rexer_core::sampling::{build_sampling_spec, SamplingConfig, SamplingSpec, Selector, WeightTable};
use rexer_core::spec::{load_spec, ApiSpecIR, Format, Method};
use rexer_core::state::Mode;
use rexer_core::trace::{
    bind_symbols, estimate_run_length, minimize, CountingSink, MemorySink, MinimizeOptions, Oracle, ReplayOptions,
    ReplayOracle, TraceEvent,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;

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

fn in_process(shop: &Arc<Bookshop>) -> InProcessTarget {
    let shop = shop.clone();
    InProcessTarget::new(move |req| shop.handle(req))
}

fn check(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

const DISCOVERY_BUDGET: Duration = Duration::from_secs(120);

/// Runs `fuzz --stop-on-error` on fresh served fixtures, one seed at a
/// time, until the bug's finding kind shows up.
fn discover(bug: BugId, expected: FindingKind, concurrent: bool) -> Verdict {
    let mut spent = Duration::ZERO;
    for seed in 0..5u64 {
        let remaining = DISCOVERY_BUDGET.saturating_sub(spent);
        if remaining.is_zero() {
            break;
        }
        let dir = tempfile::tempdir().unwrap();
        let server = shop(BookshopConfig::default().with_bug(bug));
        let url = server.base_url();
        let seed_text = seed.to_string();
        let duration = format!("{}ms", remaining.as_millis());
        let mut args = vec![
            "fuzz", "--spec", SPEC, "--endpoint", &url, "--stop-on-error", "--seed", &seed_text, "--duration", &duration,
        ];
        if concurrent {
            args.extend(["--mode", "concurrent", "--max-in-flight", "8"]);
        }
        let started = Instant::now();
        let out = rexer(&args, dir.path());
        spent += started.elapsed();
        match code(&out) {
            0 => continue,
            1 => {}
            other => return Err(format!("fuzz exited {other}: {}", String::from_utf8_lossy(&out.stderr))),
        }
        let report = read_report(&dir.path().join("rexer-report.json"));
        let first = report.result.findings.iter().find(|f| f.grade == Grade::Error).unwrap();
        if first.kind != expected {
            return Err(format!("{bug}: first error is {}, expected {expected}", first.kind));
        }
        if bug == BugId::InventoryLostUpdate {
            let (_, events) = rexer_core::trace::read_trace(&dir.path().join("rexer-trace.jsonl")).unwrap();
            let event = events.iter().find(|e| e.event_id == first.exchange_ref).unwrap();
            if !event.response.body.contains("inventory ledger") {
                return Err(format!("{bug}: 500 is not the ledger failure: {}", event.response.body));
            }
            if report.result.counters.peak_in_flight < 2 {
                return Err(format!("{bug}: window never exceeded one request"));
            }
        }
        if spent > DISCOVERY_BUDGET {
            return Err(format!("{bug}: found after {:.1}s", spent.as_secs_f64()));
        }
        return Ok(format!(
            "{bug}: {expected} with seed {seed} after {} requests, {:.1}s",
            report.result.counters.requests,
            spent.as_secs_f64()
        ));
    }
    Err(format!("{bug}: not found within 5 seeds and {}s", DISCOVERY_BUDGET.as_secs()))
}

fn criterion_1() -> Verdict {
    let cases = [
        (BugId::SchemaNullTimestamp, FindingKind::SchemaViolation, false),
        (BugId::GetMissingCustomer500, FindingKind::ServerError5xx, false),
        (BugId::DeleteCustomer500, FindingKind::ServerError5xx, false),
        (BugId::InvalidParam2xx, FindingKind::SemanticMismatch, false),
        (BugId::InventoryLostUpdate, FindingKind::ServerError5xx, true),
    ];
    let results: Vec<Verdict> = thread::scope(|s| {
        let handles: Vec<_> = cases
            .iter()
            .map(|&(bug, kind, concurrent)| s.spawn(move || discover(bug, kind, concurrent)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut lines = Vec::new();
    for r in results {
        lines.push(r?);
    }
    Ok(lines.join("; "))
}

fn criterion_2() -> Verdict {
    let f = fixture();
    let shop = Arc::new(Bookshop::new(BookshopConfig::default()));
    let target = in_process(&shop);
    let config = RunConfig {
        duration_limit: Some(Duration::from_secs(300)),
        master_seed: 2024,
        ..RunConfig::default()
    };
    let runner = Runner::new(&f.spec, &f.model, &f.sampling, config, &target);
    let started = Instant::now();
    let result = runner.run(&mut CountingSink::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(elapsed >= Duration::from_secs(300), || format!("run stopped after {:.1}s", elapsed.as_secs_f64()))?;
    check(result.stop_reason == StopReason::Timeout, || format!("stopped by {:?}", result.stop_reason))?;
    let errors = result.counters.findings.get(&Grade::Error).copied().unwrap_or(0);
    let first = result.findings.iter().find(|f| f.grade == Grade::Error);
    check(errors == 0, || format!("{errors} error findings, first: {}", first.unwrap()))?;
    Ok(format!(
        "{} requests in {:.0}s, 0 error findings, {} warnings",
        result.counters.requests,
        elapsed.as_secs_f64(),
        result.counters.findings.get(&Grade::Warning).copied().unwrap_or(0)
    ))
}

fn criterion_3() -> Verdict {
    let f = fixture();
    let edges: BTreeSet<(String, String)> = f
        .model
        .edges
        .iter()
        .map(|e| (e.dependent.clone(), e.prerequisite.clone()))
        .collect();
    let expected: BTreeSet<(String, String)> = [("book", "author"), ("order", "customer"), ("order", "book")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    check(edges == expected, || format!("edges {edges:?}"))?;
    let total = f.spec.operations.len();
    let classified = f.model.bindings.iter().filter(|b| b.crud_kind != CrudKind::Other).count();
    check(classified * 10 >= total * 9, || format!("{classified}/{total} classified"))?;
    Ok(format!("edges match, {classified}/{total} operations classified"))
}

/// A trace of 200 events with get-missing-customer-500 and the first
/// failing event at position 50 or later.
fn long_failing_trace(f: &Fixture) -> Result<(Vec<TraceEvent>, u64), String> {
    for seed in 0..20 {
        let shop = Arc::new(Bookshop::new(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500)));
        let target = in_process(&shop);
        let config = RunConfig {
            duration_limit: None,
            max_requests: Some(200),
            master_seed: seed,
            ..RunConfig::default()
        };
        let mut sink = MemorySink::default();
        Runner::new(&f.spec, &f.model, &f.sampling, config, &target)
            .run(&mut sink)
            .map_err(|e| e.to_string())?;
        let failing = sink.events.iter().find(|e| {
            e.event_id >= 50
                && e.findings.iter().any(|f| f.grade == Grade::Error && f.kind == FindingKind::ServerError5xx)
        });
        if let Some(e) = failing {
            let id = e.event_id;
            return Ok((sink.events, id));
        }
    }
    Err("no seed produced a failure at event 50 or later".into())
}

fn oracle<'a>(f: &'a Fixture, target: &'a InProcessTarget, shop: &Arc<Bookshop>) -> ReplayOracle<'a> {
    let shop = shop.clone();
    ReplayOracle {
        spec: &f.spec,
        model: &f.model,
        target,
        reset: Box::new(move || shop.reset()),
        options: ReplayOptions::default(),
        mode: Mode::Sequential,
        max_in_flight: 1,
        attempts: 1,
    }
}

fn criterion_4(f: &Fixture) -> Result<(String, Vec<TraceEvent>), String> {
    let (trace, failing) = long_failing_trace(f)?;
    let shop = Arc::new(Bookshop::new(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500)));
    let target = in_process(&shop);
    let started = Instant::now();
    let mut replay = oracle(f, &target, &shop);
    let result = minimize(&trace, failing, &f.model, &f.spec, &mut replay, &MinimizeOptions::default())
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let prefix = trace.iter().position(|e| e.event_id == failing).unwrap() + 1;
    check(prefix >= 50, || format!("prefix of {prefix} events"))?;
    check(result.events.len() <= 3, || format!("{} events remain", result.events.len()))?;
    check(result.oracle_calls <= 500, || format!("{} oracle calls", result.oracle_calls))?;
    check(elapsed <= Duration::from_secs(120), || format!("took {:.1}s", elapsed.as_secs_f64()))?;

    let mut fresh = oracle(f, &target, &shop);
    check(fresh.reproduces(&result.events), || "minimized trace does not reproduce".into())?;
    let last = result.events.len() - 1;
    for i in 0..last {
        let without: Vec<TraceEvent> = result.events.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, e)| e.clone()).collect();
        check(!fresh.reproduces(&without), || format!("event {} is removable", result.events[i].event_id))?;
    }
    Ok((
        format!(
            "{prefix} -> {} events, {} oracle calls, {:.2}s, 1-minimal by {} single removals",
            result.events.len(),
            result.oracle_calls,
            elapsed.as_secs_f64(),
            last
        ),
        result.events,
    ))
}

/// Replays `script` through the CLI on a fresh random-id fixture.
fn replay_exit(dir: &Path, script: &str, bug: Option<BugId>, id_seed: u64) -> i32 {
    std::fs::write(dir.join("script.json"), script).unwrap();
    let mut config = BookshopConfig::default().with_id_mode(IdMode::Random { seed: id_seed });
    if let Some(bug) = bug {
        config = config.with_bug(bug);
    }
    let server = shop(config);
    code(&rexer(&["replay", "--script", "script.json", "--endpoint", &server.base_url()], dir))
}

/// Minimizes a delete-customer-500 failure found on a random-id fixture, so
/// the script must carry the created id symbolically.
fn delete_customer_script(f: &Fixture) -> Result<String, String> {
    let config = BookshopConfig::default()
        .with_bug(BugId::DeleteCustomer500)
        .with_id_mode(IdMode::Random { seed: 7 });
    let shop = Arc::new(Bookshop::new(config));
    let target = in_process(&shop);
    let run = RunConfig {
        duration_limit: None,
        max_requests: Some(2000),
        stop_on_error: true,
        master_seed: 5,
        ..RunConfig::default()
    };
    let mut sink = MemorySink::default();
    let result = Runner::new(&f.spec, &f.model, &f.sampling, run, &target)
        .run(&mut sink)
        .map_err(|e| e.to_string())?;
    let failing = result.findings.iter().find(|f| f.grade == Grade::Error).ok_or("delete bug not hit")?;
    let mut replay = oracle(f, &target, &shop);
    let minimized = minimize(&sink.events, failing.exchange_ref, &f.model, &f.spec, &mut replay, &MinimizeOptions::default())
        .map_err(|e| e.to_string())?;
    let script = bind_symbols(&minimized.events, &f.model, &f.spec);
    check(!script.bindings.is_empty(), || "delete script has no symbolic binding".into())?;
    Ok(script.to_json())
}

fn criterion_5(f: &Fixture, minimized: &[TraceEvent]) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let missing = bind_symbols(minimized, &f.model, &f.spec).to_json();
    let delete = delete_customer_script(f)?;
    let cases = [
        ("get-missing-customer-500", &missing, BugId::GetMissingCustomer500),
        ("delete-customer-500", &delete, BugId::DeleteCustomer500),
    ];
    for (name, script, bug) in cases {
        let on = replay_exit(dir.path(), script, Some(bug), 91);
        check(on == 0, || format!("{name}: replay with the bug exited {on}"))?;
        let off = replay_exit(dir.path(), script, None, 92);
        check(off == 1, || format!("{name}: replay without the bug exited {off}"))?;
    }
    Ok("both scripts exit 0 with the toggle on and 1 with it off on random-id fixtures".into())
}

fn criterion_6() -> Verdict {
    let f = fixture();
    let run = || {
        let shop = Arc::new(Bookshop::new(BookshopConfig::default().with_bug(BugId::InvalidParam2xx)));
        let target = in_process(&shop);
        let config = RunConfig {
            duration_limit: None,
            max_requests: Some(5000),
            master_seed: 99,
            ..RunConfig::default()
        };
        let mut sink = MemorySink::default();
        let result = Runner::new(&f.spec, &f.model, &f.sampling, config, &target).run(&mut sink).unwrap();
        let mut requests = Vec::new();
        for e in &sink.events {
            let wire = e.plan.to_wire();
            requests.extend_from_slice(wire.method.as_str().as_bytes());
            requests.push(b' ');
            requests.extend_from_slice(wire.target.as_bytes());
            for (k, v) in &wire.headers {
                requests.extend_from_slice(format!("\n{k}: {v}").as_bytes());
            }
            requests.extend_from_slice(b"\n\n");
            requests.extend_from_slice(wire.body.as_deref().unwrap_or_default());
            requests.push(0);
        }
        let findings = serde_json::to_vec(&result.findings).unwrap();
        (requests, findings, result.findings.len())
    };
    let (a_requests, a_findings, count) = run();
    let (b_requests, b_findings, _) = run();
    check(a_requests == b_requests, || "request sequences differ".into())?;
    check(a_findings == b_findings, || "finding lists differ".into())?;
    check(count > 0, || "no findings to compare".into())?;
    Ok(format!("5000 requests ({} bytes) and {count} findings identical", a_requests.len()))
}

fn criterion_7() -> Verdict {
    let (k, eps) = (10u64, 1e-3);
    let n = estimate_run_length(k, eps);
    check(n == 88, || format!("estimate {n}"))?;
    check((n as f64).log10().round() == 2.0, || format!("{n} is not of order 100"))?;

    // Coverage time of each trial: draws until all k operations appeared.
    const TRIALS: u64 = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let misses_at = |limit: u64, covered_after: &[u64]| covered_after.iter().filter(|&&t| t > limit).count() as f64;
    let covered_after: Vec<u64> = (0..TRIALS)
        .map(|_| {
            let mut seen = 0u32;
            let mut draws = 0u64;
            while seen.count_ones() < k as u32 {
                seen |= 1 << rng.random_range(0..k as u32);
                draws += 1;
            }
            draws
        })
        .collect();
    let p_before = misses_at(n - 1, &covered_after) / TRIALS as f64;
    let p_at = misses_at(n, &covered_after) / TRIALS as f64;
    check(p_before > eps && p_at <= eps, || {
        format!("simulated miss probability {p_before:.3e} at N-1, {p_at:.3e} at N")
    })?;
    let bound = |m: u64| k as f64 * (1.0 - 1.0 / k as f64).powf(m as f64);
    for (m, p) in [(n - 1, p_before), (n, p_at)] {
        let se = (p * (1.0 - p) / TRIALS as f64).sqrt();
        check((bound(m) - p).abs() <= 4.0 * se, || format!("bound {:.3e} vs simulated {p:.3e} at {m}", bound(m)))?;
    }
    Ok(format!("N = {n}; simulated miss probability {p_before:.3e} at {} and {p_at:.3e} at {n}", n - 1))
}

fn criterion_8() -> Verdict {
    let f = fixture();
    let mut weights = WeightTable::default();
    for m in Method::ALL {
        weights.per_method.insert(m, 0.0);
    }
    weights.per_operation.insert("PUT /books/{bookId}".into(), 2.0);
    weights.per_operation.insert("GET /books/{bookId}".into(), 1.0);
    let selector = Selector::new(&f.model, &weights, &[]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    const DRAWS: u64 = 10_000;
    let mut put = 0u64;
    for _ in 0..DRAWS {
        let op = &f.model.bindings[selector.draw(&mut rng)].operation;
        match op.as_str() {
            "PUT /books/{bookId}" => put += 1,
            "GET /books/{bookId}" => {}
            other => return Err(format!("drew {other}")),
        }
    }
    let expected_put = DRAWS as f64 * 2.0 / 3.0;
    let expected_get = DRAWS as f64 / 3.0;
    let get = (DRAWS - put) as f64;
    let statistic = (put as f64 - expected_put).powi(2) / expected_put + (get - expected_get).powi(2) / expected_get;
    let critical = ChiSquared::new(1.0).unwrap().inverse_cdf(0.99);
    check(statistic < critical, || format!("chi-square {statistic:.3} >= {critical:.3}"))?;
    Ok(format!("PUT {put}/{DRAWS}, chi-square {statistic:.3} < {critical:.3}"))
}

fn guarded(f: impl FnOnce() -> Verdict + std::panic::UnwindSafe) -> Verdict {
    std::panic::catch_unwind(f).unwrap_or_else(|e| {
        let message = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {message}"))
    })
}

#[test]
fn acceptance_criteria() {
    let results: Vec<(usize, Verdict)> = thread::scope(|s| {
        let long = s.spawn(|| guarded(criterion_2));
        let discovery = s.spawn(|| guarded(criterion_1));
        let recreate = s.spawn(|| {
            let f = fixture();
            let four = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| criterion_4(&f)))
                .unwrap_or_else(|_| Err("panicked".into()));
            match four {
                Ok((line, events)) => {
                    let five = guarded(std::panic::AssertUnwindSafe(|| criterion_5(&f, &events)));
                    (Ok(line), five)
                }
                Err(e) => (Err(e), Err("minimization failed, nothing to replay".into())),
            }
        });
        let mut out = vec![
            (3, guarded(criterion_3)),
            (6, guarded(criterion_6)),
            (7, guarded(criterion_7)),
            (8, guarded(criterion_8)),
        ];
        let (four, five) = recreate.join().unwrap();
        out.push((4, four));
        out.push((5, five));
        out.push((1, discovery.join().unwrap()));
        out.push((2, long.join().unwrap()));
        out.sort_by_key(|(n, _)| *n);
        out
    });

    let mut report = String::new();
    for (n, verdict) in &results {
        match verdict {
            Ok(detail) => report.push_str(&format!("acceptance criterion {n}: PASS ({detail})\n")),
            Err(detail) => report.push_str(&format!("acceptance criterion {n}: FAIL ({detail})\n")),
        }
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(report.as_bytes()).unwrap();
    stdout.flush().unwrap();
    assert!(results.iter().all(|(_, v)| v.is_ok()), "{report}");
}
