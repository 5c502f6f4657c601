//! Command-line front end: `model`, `fuzz`, `minimize`, `replay` and
//! `report`.
//!
//! Exit codes: `fuzz` returns 0 when the run passed, 1 when it found an
//! error-grade finding and 2 when it could not run. `minimize` returns 3
//! when the failure does not reproduce. `replay` returns 0 when the failure
//! reproduced, 1 when it did not and 2 on error. `model --strict` returns 1
//! on error-grade lint findings. Any other error exits with 2.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rexer_core::driver::{NetworkOptions, NetworkTarget, Target, WireRequest};
use rexer_core::model::{infer_model_with, load_model, InferOptions, SemanticModel};
use rexer_core::spec::{load_spec_file, ApiSpecIR};
use rexer_core::state::Mode;

mod config;
mod fuzz;
mod model_cmd;
mod recreate;
mod report;

pub use config::FileConfig;
pub use report::RunReport;

/// Environment variable holding a bearer token sent with every request.
pub const AUTH_TOKEN_ENV: &str = "REXER_AUTH_TOKEN";

/// Exit status for failures to run at all.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rexer", version, about = "Model-based random exerciser for HTTP APIs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lint a specification and write its semantic model.
    Model(model_cmd::ModelArgs),
    /// Exercise an endpoint with generated requests.
    Fuzz(Box<fuzz::FuzzArgs>),
    /// Reduce a failing trace to a small recreate script.
    Minimize(recreate::MinimizeArgs),
    /// Replay a recreate script.
    Replay(recreate::ReplayArgs),
    /// Summarize a run report or a trace file.
    Report(report::ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sequential,
    Concurrent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::Concurrent => Mode::Concurrent,
        }
    }
}

/// Connection flags shared by the commands that send requests.
#[derive(Debug, Clone, Args)]
struct ConnectArgs {
    /// Extra request header, `Name: value`; repeatable.
    #[arg(long = "header", value_parser = config::parse_header)]
    headers: Vec<(String, String)>,
    /// Skip TLS certificate verification.
    #[arg(long)]
    insecure: bool,
}

fn parse_duration(text: &str) -> Result<Duration, String> {
    humantime::parse_duration(text).map_err(|e| e.to_string())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Model(a) => model_cmd::run(a),
        Command::Fuzz(a) => fuzz::run(*a),
        Command::Minimize(a) => recreate::minimize(a),
        Command::Replay(a) => recreate::replay(a),
        Command::Report(a) => report::run(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn load_spec(path: &std::path::Path) -> anyhow::Result<ApiSpecIR> {
    load_spec_file(path, None).with_context(|| format!("cannot load specification {}", path.display()))
}

/// Reads a model file, or infers one when no file is given.
fn resolve_model(spec: &ApiSpecIR, path: Option<&PathBuf>, threshold: f64) -> anyhow::Result<SemanticModel> {
    match path {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            load_model(&bytes, spec).with_context(|| format!("invalid model {}", path.display()))
        }
        None => Ok(infer_model_with(spec, InferOptions { threshold }).model),
    }
}

/// Builds a network target. The auth token from the environment comes
/// first so an explicit `authorization` header replaces it.
fn network_target(endpoint: &str, connect: &ConnectArgs, extra: &[(String, String)], insecure: bool) -> anyhow::Result<NetworkTarget> {
    let mut headers: Vec<(String, String)> = Vec::new();
    let mut put = |name: &str, value: &str| {
        headers.retain(|(n, _)| !n.eq_ignore_ascii_case(name));
        headers.push((name.to_ascii_lowercase(), value.to_string()));
    };
    if let Ok(token) = std::env::var(AUTH_TOKEN_ENV) {
        if !token.is_empty() {
            put("authorization", &format!("Bearer {token}"));
        }
    }
    for (name, value) in extra.iter().chain(&connect.headers) {
        put(name, value);
    }
    let options = NetworkOptions {
        default_headers: headers,
        insecure: insecure || connect.insecure,
    };
    NetworkTarget::new(endpoint, options).context("cannot use endpoint")
}

/// Returns a closure that POSTs to `path` on the target, for resetting the
/// system under test between replays.
fn reset_hook<'a>(target: &'a dyn Target, path: Option<String>, timeout: Duration) -> Box<dyn FnMut() + 'a> {
    match path {
        None => Box::new(|| {}),
        Some(path) => {
            let request = WireRequest {
                method: http::Method::POST,
                target: path,
                headers: Vec::new(),
                body: None,
            };
            let mut warned = false;
            Box::new(move || {
                let response = target.execute(&request, timeout);
                if !response.is_success() && !warned {
                    warned = true;
                    eprintln!(
                        "warning: reset request {} returned {}",
                        request.target,
                        response.status.map_or("no response".to_string(), |s| s.to_string())
                    );
                }
            })
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}
