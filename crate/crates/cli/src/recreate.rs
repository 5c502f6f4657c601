use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use rexer_core::checker::Grade;
use rexer_core::driver::DEFAULT_TIMEOUT;
use rexer_core::names::DEFAULT_THRESHOLD;
use rexer_core::state::Mode;
use rexer_core::trace::{
    bind_symbols, minimize as reduce, read_trace, replay_attempts, MinimizeError, MinimizeOptions, RecreateScript,
    ReplayOptions, ReplayOracle, ReplayOutcome,
};
use serde::Serialize;

use crate::{load_spec, network_target, parse_duration, print_json, reset_hook, resolve_model, ConnectArgs, EXIT_ERROR};

const DEFAULT_SCRIPT: &str = "rexer-script.json";
const EXIT_NOT_REPRODUCIBLE: i32 = 3;

/// Replays per candidate when the trace or script is concurrent.
const CONCURRENT_ATTEMPTS: usize = 20;

fn default_attempts(mode: Mode) -> usize {
    match mode {
        Mode::Sequential => 1,
        Mode::Concurrent => CONCURRENT_ATTEMPTS,
    }
}

#[derive(Debug, Args)]
pub struct MinimizeArgs {
    /// OpenAPI 3 document the trace was generated from.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Failing event; the first error-grade event when omitted.
    #[arg(long)]
    event: Option<u64>,
    /// Base URL; the one recorded in the trace when omitted.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model file; inferred from the specification when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Where to write the recreate script.
    #[arg(long, default_value = DEFAULT_SCRIPT)]
    out: PathBuf,
    /// Path POSTed to before every replay to reset the system under test.
    #[arg(long)]
    reset_path: Option<String>,
    /// Oracle calls allowed.
    #[arg(long, default_value_t = MinimizeOptions::default().budget)]
    budget: usize,
    /// Replays per candidate; 1 for sequential traces, 20 for concurrent.
    #[arg(long)]
    attempts: Option<usize>,
    /// Replays of the full trace before declaring it not reproducible.
    #[arg(long, default_value_t = MinimizeOptions::default().confirm_tries)]
    confirm_tries: usize,
    #[arg(long, value_parser = parse_duration)]
    timeout: Option<Duration>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    connect: ConnectArgs,
}

#[derive(Serialize)]
struct MinimizeOutput<'a> {
    failing_event: u64,
    original_events: usize,
    minimized_events: usize,
    kept: Vec<u64>,
    oracle_calls: usize,
    proven_minimal: bool,
    elapsed_ms: u64,
    script: &'a PathBuf,
}

pub fn minimize(args: MinimizeArgs) -> anyhow::Result<i32> {
    let spec = load_spec(&args.spec)?;
    let model = resolve_model(&spec, args.model.as_ref(), DEFAULT_THRESHOLD)?;
    let (header, events) = read_trace(&args.trace).with_context(|| format!("cannot read {}", args.trace.display()))?;
    let failing_event = match args.event {
        Some(id) => id,
        None => events
            .iter()
            .find(|e| e.findings.iter().any(|f| f.grade == Grade::Error))
            .map(|e| e.event_id)
            .ok_or_else(|| anyhow!("the trace has no error-grade finding; pass --event"))?,
    };
    let endpoint = args
        .endpoint
        .clone()
        .or(header.endpoint.clone())
        .ok_or_else(|| anyhow!("no endpoint given and none recorded in the trace"))?;
    let target = network_target(&endpoint, &args.connect, &[], false)?;
    let timeout = args.timeout.unwrap_or(DEFAULT_TIMEOUT);

    let mut oracle = ReplayOracle {
        spec: &spec,
        model: &model,
        target: &target,
        reset: reset_hook(&target, args.reset_path.clone(), timeout),
        options: ReplayOptions {
            timeout,
            max_in_flight: None,
        },
        mode: header.mode,
        max_in_flight: header.max_in_flight,
        attempts: args.attempts.unwrap_or_else(|| default_attempts(header.mode)),
    };
    let options = MinimizeOptions {
        budget: args.budget,
        confirm_tries: args.confirm_tries,
    };
    let started = Instant::now();
    let minimized = match reduce(&events, failing_event, &model, &spec, &mut oracle, &options) {
        Ok(m) => m,
        Err(e @ MinimizeError::NotReproducible { .. }) => {
            eprintln!("not reproducible: {e}");
            eprintln!(
                "the system under test may not have been reset between replays (see --reset-path), \
                 or the failure depends on timing (raise --attempts)"
            );
            return Ok(EXIT_NOT_REPRODUCIBLE);
        }
        Err(e) => return Err(e.into()),
    };
    let mut script = bind_symbols(&minimized.events, &model, &spec);
    script.mode = header.mode;
    script.max_in_flight = header.max_in_flight;
    std::fs::write(&args.out, script.to_json() + "\n")
        .with_context(|| format!("cannot write {}", args.out.display()))?;

    let output = MinimizeOutput {
        failing_event,
        original_events: minimized.original_len,
        minimized_events: minimized.events.len(),
        kept: minimized.events.iter().map(|e| e.event_id).collect(),
        oracle_calls: minimized.oracle_calls,
        proven_minimal: minimized.proven_minimal,
        elapsed_ms: started.elapsed().as_millis() as u64,
        script: &args.out,
    };
    if args.json {
        print_json(&output);
    } else {
        println!(
            "event {}: {} -> {} events, {} oracle calls, {}",
            output.failing_event,
            output.original_events,
            output.minimized_events,
            output.oracle_calls,
            if output.proven_minimal { "1-minimal" } else { "budget exhausted before 1-minimality" }
        );
        println!("script: {}", args.out.display());
    }
    Ok(0)
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    script: PathBuf,
    /// Base URL of the system under test.
    #[arg(long)]
    endpoint: String,
    /// Replays before reporting not reproduced; 1 for sequential scripts, 20
    /// for concurrent.
    #[arg(long)]
    attempts: Option<usize>,
    /// Path POSTed to before every replay.
    #[arg(long)]
    reset_path: Option<String>,
    /// Overrides the window recorded in a concurrent script.
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long, value_parser = parse_duration)]
    timeout: Option<Duration>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    connect: ConnectArgs,
}

pub fn replay(args: ReplayArgs) -> anyhow::Result<i32> {
    let script = match read_script(&args.script) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(EXIT_ERROR);
        }
    };
    let target = network_target(&args.endpoint, &args.connect, &[], false)?;
    let timeout = args.timeout.unwrap_or(DEFAULT_TIMEOUT);
    let options = ReplayOptions {
        timeout,
        max_in_flight: args.max_in_flight,
    };
    let attempts = args.attempts.unwrap_or_else(|| default_attempts(script.mode));
    let mut reset = reset_hook(&target, args.reset_path.clone(), timeout);
    let report = replay_attempts(&script, &target, &options, attempts, &mut *reset);
    if args.json {
        print_json(&report);
    } else {
        let statuses: Vec<String> = report
            .statuses
            .iter()
            .map(|s| s.map_or("-".to_string(), |s| s.to_string()))
            .collect();
        let outcome = match report.outcome {
            ReplayOutcome::Reproduced => "reproduced",
            ReplayOutcome::NotReproduced => "not reproduced",
            ReplayOutcome::Error => "error",
        };
        println!("{outcome} after {} attempt(s); statuses {}", report.attempts, statuses.join(" "));
        if let Some(e) = &report.error {
            eprintln!("error: {e}");
        }
    }
    Ok(report.outcome.exit_code())
}

fn read_script(path: &PathBuf) -> anyhow::Result<RecreateScript> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let script = RecreateScript::from_json(&bytes).with_context(|| format!("malformed script {}", path.display()))?;
    script.check().with_context(|| format!("inconsistent script {}", path.display()))?;
    if script.steps.is_empty() {
        bail!("script {} has no steps", path.display());
    }
    Ok(script)
}
