//! Experiment runner: config parsing, the named experiments and their outputs.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::Path;

use arcnp::eval::{format_sig, MetricReport, CSV_HEADER};
use serde_json::{json, Value};

pub use config::{parse_overrides, Config, Origin, EXPERIMENTS};
pub use experiments::{Outcome, Phase};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error("unknown experiment `{name}` at {location} (known: {})", EXPERIMENTS.join(", "))]
    UnknownExperiment { name: String, location: String },
    #[error("{phase} phase failed: {source}")]
    Run {
        phase: &'static str,
        #[source]
        source: arcnp::Error,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Round every float in a JSON tree to nine significant digits.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if !n.is_i64() && !n.is_u64() => match n.as_f64() {
            Some(f) => format_sig(f).parse::<f64>().ok().and_then(serde_json::Number::from_f64).map_or(Value::Null, Value::Number),
            None => Value::Null,
        },
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Run {
        phase: Phase::Write.name(),
        source: arcnp::Error::Serde(e),
    })
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn manifest(cfg: &Config, status: &str, phase: Phase, error: Option<&str>) -> Value {
    json!({
        "library": "arcnp",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment(),
        "seed": cfg.raw("seed"),
        "status": status,
        "phase": phase.name(),
        "error": error,
        "config": cfg.to_map(),
    })
}

fn write_outputs(out: &Path, outcome: &Outcome) -> Result<(), CliError> {
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.reports))?;
    let reports = outcome.reports.iter().map(to_value).collect::<Result<Vec<_>, _>>()?;
    fs::write(out.join("metrics.json"), pretty(&round_floats(Value::Array(reports))))?;
    let mut lines = String::new();
    for s in &outcome.samples {
        lines.push_str(&round_floats(s.clone()).to_string());
        lines.push('\n');
    }
    fs::write(out.join("samples.jsonl"), lines)?;
    Ok(())
}

/// Run the configured experiment on a pool of `threads` workers and write
/// its outputs. A manifest is written whether or not the run succeeds.
pub fn run(cfg: &Config) -> Result<Outcome, CliError> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let threads: usize = cfg.get("threads")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config {
            location: format!("{}, field `threads`", cfg.origin("threads")),
            message: e.to_string(),
        })?;
    let mut phase = Phase::Setup;
    let result = pool.install(|| experiments::run(cfg, &mut phase));
    match result {
        Ok(outcome) => {
            phase = Phase::Write;
            if let Err(e) = write_outputs(&out, &outcome) {
                fs::write(out.join("manifest.json"), pretty(&manifest(cfg, "failed", phase, Some(&e.to_string()))))?;
                return Err(e);
            }
            fs::write(out.join("manifest.json"), pretty(&manifest(cfg, "ok", phase, None)))?;
            Ok(outcome)
        }
        Err(source) => {
            let err = CliError::Run {
                phase: phase.name(),
                source,
            };
            fs::write(out.join("manifest.json"), pretty(&manifest(cfg, "failed", phase, Some(&err.to_string()))))?;
            Err(err)
        }
    }
}

/// Human-readable plan: the steps and every resolved setting.
pub fn describe(cfg: &Config) -> String {
    let mut s = format!("experiment {}\n\nsteps:\n", cfg.experiment());
    for (i, step) in experiments::plan(cfg).iter().enumerate() {
        s.push_str(&format!("  {}. {step}\n", i + 1));
    }
    s.push_str("\nsettings:\n");
    let width = cfg.entries().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    for (k, v, origin) in cfg.entries() {
        let note = match origin {
            Origin::Default => " (default)".to_string(),
            other => format!(" ({other})"),
        };
        s.push_str(&format!("  {k:width$} = {v}{note}\n"));
    }
    s
}
