use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::Args;
use rexer_core::driver::DEFAULT_TIMEOUT;
use rexer_core::generator::{Progress, RunConfig, RunError, Runner, Verdict};
use rexer_core::sampling::build_sampling_spec;
use rexer_core::state::Mode;
use rexer_core::trace::{JsonlSink, TraceHeader};

use crate::config::FileConfig;
use crate::report::RunReport;
use crate::{load_spec, network_target, parse_duration, print_json, resolve_model, ConnectArgs, ModeArg, EXIT_ERROR};

const DEFAULT_TRACE: &str = "rexer-trace.jsonl";
const DEFAULT_REPORT: &str = "rexer-report.json";
const DEFAULT_DURATION: Duration = Duration::from_secs(60);
const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Args)]
pub struct FuzzArgs {
    /// OpenAPI 3 document, JSON or YAML.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Reviewed model file; inferred from the specification when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base URL of the system under test.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Requests in flight at once in concurrent mode.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Wall-clock limit, for example `90s` or `5m`.
    #[arg(long, value_parser = parse_duration)]
    duration: Option<Duration>,
    #[arg(long)]
    max_requests: Option<u64>,
    /// Stop at the first error-grade finding.
    #[arg(long)]
    stop_on_error: bool,
    /// Per-request timeout.
    #[arg(long, value_parser = parse_duration)]
    timeout: Option<Duration>,
    /// Trace file, JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Report file, JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print progress to standard error.
    #[arg(long)]
    progress: bool,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    connect: ConnectArgs,
}

pub fn run(args: FuzzArgs) -> anyhow::Result<i32> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let spec_path = args
        .spec
        .clone()
        .or(file.spec.clone())
        .ok_or_else(|| anyhow!("no specification given (--spec or `spec` in the configuration)"))?;
    let endpoint = args
        .endpoint
        .clone()
        .or(file.endpoint.clone())
        .ok_or_else(|| anyhow!("no endpoint given (--endpoint or `endpoint` in the configuration)"))?;
    let spec = load_spec(&spec_path)?;
    let model = resolve_model(&spec, args.model.as_ref().or(file.model.as_ref()), file.sampling.threshold)?;
    let sampling = build_sampling_spec(&spec, &model, &file.sampling);

    let mode: Mode = args.mode.map(Mode::from).or(file.mode).unwrap_or(Mode::Sequential);
    let config = RunConfig {
        mode,
        max_in_flight: args.max_in_flight.or(file.max_in_flight).unwrap_or(DEFAULT_WINDOW),
        duration_limit: Some(args.duration.or(file.duration).unwrap_or(DEFAULT_DURATION)),
        max_requests: args.max_requests.or(file.max_requests),
        stop_on_error: args.stop_on_error || file.stop_on_error.unwrap_or(false),
        master_seed: args.seed.or(file.seed).unwrap_or(0),
        timeout: args.timeout.or(file.timeout).unwrap_or(DEFAULT_TIMEOUT),
        warmup: file.warmup.unwrap_or(RunConfig::default().warmup),
        policy: file.policy,
        state_capacity: file.state_capacity.unwrap_or(RunConfig::default().state_capacity),
    };
    let trace_path = args.trace.clone().or(file.trace.clone()).unwrap_or_else(|| DEFAULT_TRACE.into());
    let report_path = args.report.clone().or(file.report.clone()).unwrap_or_else(|| DEFAULT_REPORT.into());

    let extra: Vec<(String, String)> = file.headers.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let target = network_target(&endpoint, &args.connect, &extra, file.insecure.unwrap_or(false))?;

    let mut header = TraceHeader::new(config.effective_mode(), config.window());
    header.seed = Some(config.master_seed);
    header.endpoint = Some(target.base_url().to_string());
    let mut sink = JsonlSink::create(&trace_path, &header)
        .with_context(|| format!("cannot create trace {}", trace_path.display()))?;

    let mut runner = Runner::new(&spec, &model, &sampling, config.clone(), &target);
    let stop = runner.stop.clone();
    let _ = ctrlc::set_handler(move || stop.stop());

    let started = Instant::now();
    let (tx, rx) = crossbeam_channel::unbounded::<Progress>();
    if args.progress {
        runner.progress = Some(tx);
    } else {
        drop(tx);
    }
    let outcome = std::thread::scope(|scope| {
        scope.spawn(move || {
            for p in rx {
                eprintln!(
                    "[{:>6.1}s] {} requests, {:.0}/s, {} findings",
                    p.elapsed.as_secs_f64(),
                    p.requests,
                    p.requests_per_second,
                    p.findings
                );
            }
        });
        let outcome = runner.run(&mut sink);
        runner.progress = None;
        outcome
    });
    let result = match outcome {
        Ok(result) => result,
        Err(RunError::EndpointUnreachable(e)) => {
            eprintln!("error: {e}");
            return Ok(EXIT_ERROR);
        }
        Err(e) => return Err(e.into()),
    };

    let report = RunReport::new(&endpoint, &spec_path, &config, started.elapsed(), result);
    std::fs::write(&report_path, report.to_json())
        .with_context(|| format!("cannot write report {}", report_path.display()))?;
    if args.json {
        print_json(&report);
    } else {
        print!("{}", report.render());
        println!("trace: {}", trace_path.display());
        println!("report: {}", report_path.display());
    }
    if let Some(e) = &report.result.sink_error {
        eprintln!("error: {e}");
        return Ok(EXIT_ERROR);
    }
    Ok(match report.result.verdict {
        Verdict::Passed => 0,
        Verdict::Failed => 1,
    })
}
