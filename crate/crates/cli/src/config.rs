//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const EXPERIMENTS: [&str; 7] = [
    "eq-kl",
    "sawtooth-loglik",
    "mixture-prop1",
    "smooth-samples",
    "predprey",
    "auxar",
    "ordering-spread",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Manifest,
    Override,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Manifest => write!(f, "manifest"),
            Origin::Override => write!(f, "command line"),
            Origin::Default => write!(f, "default"),
        }
    }
}

/// Resolved configuration: every known key with its value and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, (String, Origin)>,
}

fn common_defaults(experiment: &str) -> Vec<(&'static str, String)> {
    vec![
        ("experiment", experiment.to_string()),
        ("seed", "0".into()),
        ("out", format!("out/{experiment}")),
        ("threads", "1".into()),
        ("checkpoint", String::new()),
        ("ordering", "random".into()),
        ("block_size", "1".into()),
        ("num_samples", "4".into()),
    ]
}

fn training_defaults(epochs: usize, tasks_per_epoch: usize) -> Vec<(&'static str, String)> {
    vec![
        ("width", "64".into()),
        ("epochs", epochs.to_string()),
        ("tasks_per_epoch", tasks_per_epoch.to_string()),
        ("batch_size", "16".into()),
        ("learning_rate", "0.0003".into()),
        ("validation_tasks", "256".into()),
    ]
}

/// Experiment-specific keys and their defaults.
pub fn experiment_defaults(experiment: &str) -> Option<Vec<(&'static str, String)>> {
    let s = |v: &str| v.to_string();
    let mut d: Vec<(&'static str, String)> = match experiment {
        "eq-kl" => vec![
            ("model", s("ideal-oracle")),
            ("lengthscale", s("0.25")),
            ("noise_variance", s("0.05")),
            ("context_min", s("0")),
            ("context_max", s("30")),
            ("num_targets", s("50")),
            ("eval_tasks", s("256")),
            ("mc_samples", s("8")),
        ],
        "sawtooth-loglik" => vec![
            ("model", s("train-fresh")),
            ("sawtooth_variant", s("auxiliary")),
            ("context_min", s("0")),
            ("context_max", s("75")),
            ("num_targets", s("100")),
            ("eval_tasks", s("512")),
        ],
        "mixture-prop1" => vec![
            ("model", s("ideal-oracle")),
            ("ordering", s("left-to-right")),
            ("context_min", s("0")),
            ("context_max", s("5")),
            ("targets", s("1,2,4,6")),
            ("eval_tasks", s("10")),
            ("mc_samples", s("10000")),
        ],
        "smooth-samples" => vec![
            ("model", s("ideal-oracle")),
            ("lengthscale", s("0.25")),
            ("noise_variance", s("0.05")),
            ("context_min", s("0")),
            ("context_max", s("0")),
            ("grid_sizes", s("8,16,32,64")),
            ("query_points", s("64")),
            ("eval_tasks", s("200")),
        ],
        "predprey" => vec![
            ("model", s("train-fresh")),
            ("lv_step", s("0.00025")),
            ("splits", s("interpolation,forecasting,reconstruction")),
            ("eval_tasks", s("64")),
        ],
        "auxar" => vec![
            ("model", s("ideal-oracle")),
            ("process", s("function-mixture")),
            ("context_min", s("0")),
            ("context_max", s("2")),
            ("num_targets", s("4")),
            ("aux_length", s("8")),
            ("aux_trajectories", s("64")),
            ("aux_lo", s("-2")),
            ("aux_hi", s("2")),
            ("eval_tasks", s("1000")),
        ],
        "ordering-spread" => vec![
            ("model", s("ideal-oracle")),
            ("process", s("eq")),
            ("context_sizes", s("0,20")),
            ("num_targets", s("50")),
            ("n_orderings", s("16")),
            ("eval_tasks", s("32")),
        ],
        _ => return None,
    };
    match experiment {
        "sawtooth-loglik" => d.extend(training_defaults(100, 1024)),
        "predprey" => d.extend(training_defaults(10, 256)),
        "mixture-prop1" => {}
        _ => d.extend(training_defaults(20, 1024)),
    }
    Some(d)
}

fn parse_lines(text: &str) -> Result<Vec<(String, String, usize)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
            location: format!("line {}", i + 1),
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// A manifest is accepted as a config: its `config` object is read back.
fn parse_manifest(text: &str) -> Result<Vec<(String, String, usize)>, CliError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config {
        location: format!("line {}", e.line()),
        message: format!("invalid manifest JSON: {e}"),
    })?;
    let obj = v.get("config").and_then(|c| c.as_object()).ok_or_else(|| CliError::Config {
        location: "manifest".into(),
        message: "manifest has no `config` object".into(),
    })?;
    Ok(obj
        .iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s, 0)
        })
        .collect())
}

impl Config {
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let entries = if text.trim_start().starts_with('{') {
            parse_manifest(text)?
        } else {
            parse_lines(text)?
        };
        let mut given: BTreeMap<String, (String, Origin)> = BTreeMap::new();
        for (k, v, line) in entries {
            let origin = if line == 0 { Origin::Manifest } else { Origin::Line(line) };
            if let Some((_, prev)) = given.get(&k) {
                return Err(CliError::Config {
                    location: origin.to_string(),
                    message: format!("key `{k}` already set at {prev}"),
                });
            }
            given.insert(k, (v, origin));
        }
        for (k, v) in overrides {
            given.insert(k.clone(), (v.clone(), Origin::Override));
        }
        let (experiment, exp_origin) = given.get("experiment").cloned().ok_or_else(|| CliError::Config {
            location: "experiment".into(),
            message: "missing required key `experiment`".into(),
        })?;
        let defaults = experiment_defaults(&experiment).ok_or_else(|| CliError::UnknownExperiment {
            name: experiment.clone(),
            location: exp_origin.to_string(),
        })?;
        let mut values: BTreeMap<String, (String, Origin)> = BTreeMap::new();
        for (k, v) in common_defaults(&experiment).into_iter().chain(defaults) {
            values.insert(k.to_string(), (v, Origin::Default));
        }
        for (k, (v, origin)) in given {
            if !values.contains_key(&k) {
                return Err(CliError::Config {
                    location: origin.to_string(),
                    message: format!("unknown key `{k}` for experiment {experiment}"),
                });
            }
            values.insert(k, (v, origin));
        }
        let config = Self { values };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            location: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::from_text(&text, overrides)
    }

    pub fn experiment(&self) -> &str {
        &self.values["experiment"].0
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values[key].0
    }

    pub fn origin(&self, key: &str) -> &Origin {
        &self.values[key].1
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &Origin)> {
        self.values.iter().map(|(k, (v, o))| (k.as_str(), v.as_str(), o))
    }

    /// All values as strings, for the manifest.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        let (v, origin) = &self.values[key];
        v.parse().map_err(|e: T::Err| CliError::Config {
            location: format!("{origin}, field `{key}`"),
            message: format!("cannot parse `{v}`: {e}"),
        })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let (v, origin) = &self.values[key];
        v.split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse().map_err(|e: T::Err| CliError::Config {
                    location: format!("{origin}, field `{key}`"),
                    message: format!("cannot parse `{p}`: {e}"),
                })
            })
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        let c = self.raw("checkpoint");
        (!c.is_empty()).then(|| PathBuf::from(c))
    }

    fn invalid(&self, key: &str, message: String) -> CliError {
        CliError::Config {
            location: format!("{}, field `{key}`", self.origin(key)),
            message,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.get::<u64>("seed")?;
        if self.get::<usize>("threads")? == 0 {
            return Err(self.invalid("threads", "need at least one thread".into()));
        }
        if self.get::<usize>("block_size")? == 0 {
            return Err(self.invalid("block_size", "block size must be at least 1".into()));
        }
        self.get::<usize>("num_samples")?;
        if self.get::<usize>("eval_tasks")? == 0 {
            return Err(self.invalid("eval_tasks", "need at least one evaluation task".into()));
        }
        match self.raw("ordering") {
            "random" | "left-to-right" => {}
            other => return Err(self.invalid("ordering", format!("unknown ordering `{other}` (random, left-to-right)"))),
        }
        let model = self.raw("model");
        match model {
            "ideal-oracle" | "train-fresh" => {}
            "load-checkpoint" => match self.checkpoint() {
                None => return Err(self.invalid("checkpoint", "load-checkpoint needs a `checkpoint` path".into())),
                Some(p) if !p.is_file() => {
                    return Err(self.invalid("checkpoint", format!("checkpoint {} does not exist", p.display())))
                }
                Some(_) => {}
            },
            other => {
                return Err(self.invalid(
                    "model",
                    format!("unknown model source `{other}` (train-fresh, load-checkpoint, ideal-oracle)"),
                ))
            }
        }
        let experiment = self.experiment();
        let oracle_only = matches!(experiment, "mixture-prop1");
        let no_oracle = matches!(experiment, "sawtooth-loglik" | "predprey");
        if oracle_only && model != "ideal-oracle" {
            return Err(self.invalid("model", format!("{experiment} compares closed-form oracles only")));
        }
        if no_oracle && model == "ideal-oracle" {
            return Err(self.invalid("model", format!("{experiment} has no closed-form ideal model")));
        }
        if self.values.contains_key("process") {
            let process = self.raw("process");
            crate::experiments::parse_process(process).map_err(|m| self.invalid("process", m))?;
        }
        for key in ["context_min", "context_max", "num_targets", "epochs", "tasks_per_epoch", "batch_size", "width"] {
            if self.values.contains_key(key) {
                self.get::<usize>(key)?;
            }
        }
        if self.values.contains_key("context_min") && self.get::<usize>("context_min")? > self.get::<usize>("context_max")? {
            return Err(self.invalid("context_min", "context_min exceeds context_max".into()));
        }
        Ok(())
    }
}

/// Parse `--key value` / `--key=value` pairs; dashes in keys become underscores.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| CliError::Config {
            location: "command line".into(),
            message: format!("expected `--key value`, found `{a}`"),
        })?;
        let (k, v) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config {
                    location: "command line".into(),
                    message: format!("missing value for `--{key}`"),
                })?;
                (key.to_string(), v.clone())
            }
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}
