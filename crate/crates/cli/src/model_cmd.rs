use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rexer_core::model::{apply_overrides, infer_model_with, serialize_model, InferOptions, ModelOverrides};
use rexer_core::names::DEFAULT_THRESHOLD;
use rexer_core::spec::{lint_spec_with, LintFinding, Severity};
use serde::Serialize;

use crate::{load_spec, print_json};

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// OpenAPI 3 document, JSON or YAML.
    #[arg(long)]
    spec: PathBuf,
    /// Where to write the model; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON document of reviewed corrections to apply.
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Exit with 1 when lint reports an error-grade finding.
    #[arg(long)]
    strict: bool,
    /// Name-match threshold for id fields and dependency edges.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct ModelOutput<'a> {
    lint: &'a [LintFinding],
    warnings: &'a [LintFinding],
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<&'a PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<serde_json::Value>,
}

pub fn run(args: ModelArgs) -> anyhow::Result<i32> {
    let spec = load_spec(&args.spec)?;
    let lint = lint_spec_with(&spec, args.threshold);
    let inference = infer_model_with(&spec, InferOptions { threshold: args.threshold });
    let mut model = inference.model;
    if let Some(path) = &args.overrides {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let overrides: ModelOverrides =
            serde_json::from_slice(&bytes).with_context(|| format!("invalid overrides {}", path.display()))?;
        model = apply_overrides(&model, &overrides, &spec).context("cannot apply overrides")?;
    }
    let encoded = serialize_model(&model);
    if let Some(out) = &args.out {
        std::fs::write(out, &encoded).with_context(|| format!("cannot write {}", out.display()))?;
    }

    if args.json {
        let model = match args.out {
            Some(_) => None,
            None => Some(serde_json::from_slice(&encoded).expect("model is JSON")),
        };
        print_json(&ModelOutput {
            lint: &lint,
            warnings: &inference.warnings,
            out: args.out.as_ref(),
            model,
        });
    } else {
        for f in lint.iter().chain(&inference.warnings) {
            eprintln!("{f}");
        }
        match &args.out {
            Some(out) => eprintln!(
                "wrote {} ({} resources, {} operations, {} edges)",
                out.display(),
                model.resources.len(),
                model.bindings.len(),
                model.edges.len()
            ),
            None => print!("{}", String::from_utf8_lossy(&encoded)),
        }
    }

    let errors = lint.iter().any(|f| f.severity == Severity::Error);
    Ok(if args.strict && errors { 1 } else { 0 })
}
