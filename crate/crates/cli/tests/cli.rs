mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::process::Command;
use std::sync::{Arc, Mutex};

use common::{code, read_report, rexer, shop, stdout, SPEC};
use rexer_bookshop::{BookshopConfig, BugId};
use rexer_core::checker::FindingKind;
use rexer_core::model::Provenance;
use rexer_core::state::Mode;
use rexer_core::trace::{read_trace, RecreateScript, TraceEvent};
use serde_json::Value;

fn edges(model: &Value) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = model["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["dependent"].as_str().unwrap().to_string(), e["prerequisite"].as_str().unwrap().to_string()))
        .collect();
    out.sort();
    out
}

#[test]
fn model_writes_the_fixture_edges() {
    let dir = tempfile::tempdir().unwrap();
    let out = rexer(&["model", "--spec", SPEC, "--out", "model.json"], dir.path());
    assert_eq!(code(&out), 0, "{out:?}");
    let model: Value = serde_json::from_slice(&std::fs::read(dir.path().join("model.json")).unwrap()).unwrap();
    let pairs = |v: &[(&str, &str)]| v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect::<Vec<_>>();
    assert_eq!(edges(&model), pairs(&[("book", "author"), ("order", "book"), ("order", "customer")]));
}

#[test]
fn model_json_output_carries_lint_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = rexer(&["model", "--spec", SPEC, "--json"], dir.path());
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["lint"].is_array());
    assert_eq!(edges(&v["model"]).len(), 3);
}

#[test]
fn strict_fails_on_error_grade_lint() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"
openapi: 3.0.3
info: {title: t, version: '1'}
paths:
  /widgets:
    delete:
      responses:
        '204': {description: gone}
"#;
    std::fs::write(dir.path().join("bad.yaml"), spec).unwrap();
    let lenient = rexer(&["model", "--spec", "bad.yaml", "--out", "m.json"], dir.path());
    assert_eq!(code(&lenient), 0);
    let strict = rexer(&["model", "--spec", "bad.yaml", "--out", "m.json", "--strict"], dir.path());
    assert_eq!(code(&strict), 1);
    assert!(String::from_utf8_lossy(&strict.stderr).contains("error["));
}

#[test]
fn overrides_add_a_user_edited_edge() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = r#"{"edges":[{"dependent":"order","prerequisite":"author","via_parameter":"authorId"}]}"#;
    std::fs::write(dir.path().join("o.json"), overrides).unwrap();
    let out = rexer(&["model", "--spec", SPEC, "--overrides", "o.json", "--out", "m.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model: Value = serde_json::from_slice(&std::fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    let added = model["edges"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["dependent"] == "order" && e["prerequisite"] == "author")
        .expect("edge added");
    let provenance: Provenance = serde_json::from_value(added["provenance"].clone()).unwrap();
    assert_eq!(provenance, Provenance::UserEdited);
}

#[test]
fn missing_spec_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&rexer(&["model", "--spec", "nope.yaml"], dir.path())), 2);
}

#[test]
fn clean_fuzz_passes() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default());
    let out = rexer(
        &["fuzz", "--spec", SPEC, "--endpoint", &server.base_url(), "--duration", "5s", "--seed", "3"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let report = read_report(&dir.path().join("rexer-report.json"));
    assert!(report.result.counters.requests > 100);
    assert!(report.result.findings.iter().all(|f| f.grade != rexer_core::checker::Grade::Error));
    let (_, events) = read_trace(&dir.path().join("rexer-trace.jsonl")).unwrap();
    assert_eq!(events.len() as u64, report.result.counters.requests);
}

#[test]
fn stop_on_error_names_the_finding_kind() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500));
    let out = rexer(
        &["fuzz", "--spec", SPEC, "--endpoint", &server.base_url(), "--duration", "60s", "--stop-on-error", "--json"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    let printed: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(printed["result"]["stop_reason"], "error-detected");
    let report = read_report(&dir.path().join("rexer-report.json"));
    assert!(report.finding_kinds.contains_key(&FindingKind::ServerError5xx));
}

#[test]
fn concurrent_fuzz_exercises_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default());
    let out = rexer(
        &[
            "fuzz", "--spec", SPEC, "--endpoint", &server.base_url(), "--mode", "concurrent",
            "--max-in-flight", "8", "--max-requests", "2000",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let report = read_report(&dir.path().join("rexer-report.json"));
    assert_eq!(report.mode, Mode::Concurrent);
    assert!(report.result.counters.peak_in_flight > 1);
    assert!(report.result.counters.peak_in_flight <= 8);
}

#[test]
fn unreachable_endpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = rexer(
        &["fuzz", "--spec", SPEC, "--endpoint", &format!("http://127.0.0.1:{port}"), "--duration", "5s"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn flags_override_the_configuration_file() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default());
    let config = serde_json::json!({
        "spec": SPEC,
        "endpoint": server.base_url(),
        "seed": 11,
        "mode": "concurrent",
        "max_requests": 300,
        "report": "from-file.json",
        "sampling": {"weights": {"per_method": {"GET": 3}}}
    });
    std::fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
    let out = rexer(&["fuzz", "--config", "run.json", "--mode", "sequential", "--seed", "12"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&dir.path().join("from-file.json"));
    assert_eq!(report.mode, Mode::Sequential);
    assert_eq!(report.seed, 12);
    assert_eq!(report.result.counters.requests, 300);
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), r#"{"seeed": 1}"#).unwrap();
    let out = rexer(&["fuzz", "--config", "run.json", "--spec", SPEC, "--endpoint", "http://127.0.0.1:1"], dir.path());
    assert_eq!(code(&out), 2);
}

/// Runs until the seeded bug fires and returns the trace events.
fn failing_trace(dir: &std::path::Path, base_url: &str) -> Vec<TraceEvent> {
    let out = rexer(
        &["fuzz", "--spec", SPEC, "--endpoint", base_url, "--duration", "60s", "--stop-on-error", "--seed", "2"],
        dir,
    );
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    read_trace(&dir.join("rexer-trace.jsonl")).unwrap().1
}

#[test]
fn minimize_then_replay_with_and_without_the_bug() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default().with_bug(BugId::DeleteCustomer500));
    let url = server.base_url();
    let events = failing_trace(dir.path(), &url);

    let out = rexer(
        &["minimize", "--spec", SPEC, "--trace", "rexer-trace.jsonl", "--reset-path", "/_admin/reset", "--json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats["original_events"].as_u64().unwrap() as usize, events.len());
    assert!(stats["minimized_events"].as_u64().unwrap() <= 2);
    assert_eq!(stats["proven_minimal"], true);
    let script = RecreateScript::from_json(&std::fs::read(dir.path().join("rexer-script.json")).unwrap()).unwrap();
    assert_eq!(script.expected_failure.as_ref().unwrap().kind, FindingKind::ServerError5xx);

    let replay = |extra: &[&str]| {
        let mut args = vec!["replay", "--script", "rexer-script.json", "--endpoint", &url, "--reset-path", "/_admin/reset"];
        args.extend_from_slice(extra);
        rexer(&args, dir.path())
    };
    assert_eq!(code(&replay(&[])), 0);
    server.shop().set_bug(BugId::DeleteCustomer500, false);
    let fixed = replay(&["--json"]);
    assert_eq!(code(&fixed), 1);
    let report: Value = serde_json::from_str(&stdout(&fixed)).unwrap();
    assert_eq!(report["outcome"], "not-reproduced");
}

#[test]
fn minimizing_a_minimal_trace_gives_the_same_script() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default().with_bug(BugId::DeleteCustomer500));
    failing_trace(dir.path(), &server.base_url());
    let minimize = |trace: &str, out: &str| {
        rexer(
            &["minimize", "--spec", SPEC, "--trace", trace, "--reset-path", "/_admin/reset", "--out", out, "--json"],
            dir.path(),
        )
    };
    let first = minimize("rexer-trace.jsonl", "a.json");
    assert_eq!(code(&first), 0);
    let kept: Vec<u64> = serde_json::from_str::<Value>(&stdout(&first)).unwrap()["kept"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();

    let text = std::fs::read_to_string(dir.path().join("rexer-trace.jsonl")).unwrap();
    let mut lines = text.lines();
    let mut small = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let event: TraceEvent = serde_json::from_str(line).unwrap();
        if kept.contains(&event.event_id) {
            small.push_str(line);
            small.push('\n');
        }
    }
    std::fs::write(dir.path().join("small.jsonl"), small).unwrap();
    let second = minimize("small.jsonl", "b.json");
    assert_eq!(code(&second), 0);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn minimize_of_a_fixed_bug_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500));
    failing_trace(dir.path(), &server.base_url());
    server.shop().set_bug(BugId::GetMissingCustomer500, false);
    let out = rexer(
        &["minimize", "--spec", SPEC, "--trace", "rexer-trace.jsonl", "--reset-path", "/_admin/reset"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not reproducible"));
}

#[test]
fn malformed_script_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), "{\"script_version\": 1, \"steps\": ").unwrap();
    let out = rexer(&["replay", "--script", "s.json", "--endpoint", "http://127.0.0.1:1"], dir.path());
    assert_eq!(code(&out), 2);
    std::fs::write(dir.path().join("v.json"), r#"{"script_version":9,"mode":"sequential","max_in_flight":1,"steps":[],"bindings":[]}"#).unwrap();
    let out = rexer(&["replay", "--script", "v.json", "--endpoint", "http://127.0.0.1:1"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn report_reads_reports_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let server = shop(BookshopConfig::default().with_bug(BugId::GetMissingCustomer500));
    let events = failing_trace(dir.path(), &server.base_url());

    let text = rexer(&["report", "rexer-report.json"], dir.path());
    assert_eq!(code(&text), 0);
    assert!(stdout(&text).starts_with("FAILED (error-detected)"));
    assert!(stdout(&text).contains("server-error-5xx"));

    let json = rexer(&["report", "rexer-trace.jsonl", "--json"], dir.path());
    assert_eq!(code(&json), 0);
    let summary: Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(summary["events"].as_u64().unwrap() as usize, events.len());
    assert_eq!(summary["first_error_event"].as_u64(), Some(events.last().unwrap().event_id));

    std::fs::write(dir.path().join("junk.json"), "[1,2]").unwrap();
    assert_eq!(code(&rexer(&["report", "junk.json"], dir.path())), 2);
}

/// Answers every request with a 500 and records request heads.
fn recording_server() -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let heads = Arc::new(Mutex::new(Vec::new()));
    let seen = heads.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let seen = seen.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut writer = stream;
                loop {
                    let mut head = String::new();
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        if line == "\r\n" {
                            break;
                        }
                        head.push_str(&line);
                    }
                    seen.lock().unwrap().push(head);
                    let reply = "HTTP/1.1 500 Internal Server Error\r\ncontent-length: 0\r\n\r\n";
                    if writer.write_all(reply.as_bytes()).is_err() {
                        return;
                    }
                }
            });
        }
    });
    (url, heads)
}

#[test]
fn auth_token_and_headers_reach_the_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (url, heads) = recording_server();
    let script = serde_json::json!({
        "script_version": 1,
        "mode": "sequential",
        "max_in_flight": 1,
        "steps": [{"step": 1, "operation": "GET /customers/{customerId}", "method": "GET",
                   "url": "/customers/x", "headers": {"accept": "application/json"}, "source_event": 1}],
        "bindings": [],
        "expected_failure": {"step": 1, "kind": "server-error-5xx", "detail": "server error 500"}
    });
    std::fs::write(dir.path().join("s.json"), script.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rexer"))
        .args(["replay", "--script", "s.json", "--endpoint", &url, "--header", "X-Team: blue"])
        .current_dir(dir.path())
        .env(rexer_cli::AUTH_TOKEN_ENV, "s3cret")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let heads = heads.lock().unwrap();
    let step = heads.iter().find(|h| h.starts_with("GET /customers/x")).expect("step sent");
    let lower = step.to_ascii_lowercase();
    assert!(lower.contains("authorization: bearer s3cret"), "{step}");
    assert!(lower.contains("x-team: blue"), "{step}");
}
