//! Tasks, points and marginal predictions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed input-output pair. `channel` distinguishes output series in
/// multi-series tasks (prey = 0, predator = 1); single-series data uses 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub channel: u8,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, channel: 0 }
    }

    pub fn with_channel(x: f64, y: f64, channel: u8) -> Self {
        Self { x, y, channel }
    }

    pub fn input(&self) -> Input {
        Input {
            x: self.x,
            channel: self.channel,
        }
    }
}

/// A query location.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub x: f64,
    pub channel: u8,
}

impl Input {
    pub fn new(x: f64) -> Self {
        Self { x, channel: 0 }
    }

    pub fn with_channel(x: f64, channel: u8) -> Self {
        Self { x, channel }
    }

    pub fn at(self, y: f64) -> Point {
        Point {
            x: self.x,
            y,
            channel: self.channel,
        }
    }
}

pub fn inputs(xs: &[f64]) -> Vec<Input> {
    xs.iter().map(|&x| Input::new(x)).collect()
}

/// A context set plus target inputs, optionally with target outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub context: Vec<Point>,
    pub targets: Vec<Input>,
    pub target_y: Option<Vec<f64>>,
}

impl Task {
    pub fn new(context: Vec<Point>, targets: Vec<Input>, target_y: Option<Vec<f64>>) -> Result<Self> {
        let task = Self {
            context,
            targets,
            target_y,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(ys) = &self.target_y {
            if ys.len() != self.targets.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.targets.len(),
                    got: ys.len(),
                });
            }
            if ys.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidArgument("non-finite target output".into()));
            }
        }
        if self.context.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite context point".into()));
        }
        if self.targets.iter().any(|t| !t.x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite target input".into()));
        }
        Ok(())
    }

    pub fn target_x(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.x).collect()
    }

    pub fn target_outputs(&self) -> Result<&[f64]> {
        self.target_y
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("task has no target outputs".into()))
    }

    /// Target inputs paired with their observed outputs.
    pub fn target_points(&self) -> Result<Vec<Point>> {
        let ys = self.target_outputs()?;
        Ok(self.targets.iter().zip(ys).map(|(t, &y)| t.at(y)).collect())
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }
}

/// Independent Gaussian marginals, one per target input.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalPrediction {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MarginalPrediction {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: variances.len(),
            });
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {v}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean".into()));
        }
        Ok(Self { means, variances })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Sum of independent Gaussian log-densities.
    pub fn logpdf(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(values
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&v, (&m, &s2))| crate::gaussian::normal_logpdf(v, m, s2))
            .sum())
    }
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    context: Vec<(f64, f64, u8)>,
    target_x: Vec<(f64, u8)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_y: Option<Vec<f64>>,
}

impl Task {
    /// One-line JSON encoding: `{"context":[[x,y,c]],"target_x":[[x,c]],"target_y":[y]}`.
    pub fn to_json_line(&self) -> Result<String> {
        let record = TaskRecord {
            context: self.context.iter().map(|p| (p.x, p.y, p.channel)).collect(),
            target_x: self.targets.iter().map(|t| (t.x, t.channel)).collect(),
            target_y: self.target_y.clone(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let record: TaskRecord = serde_json::from_str(line)?;
        Task::new(
            record
                .context
                .into_iter()
                .map(|(x, y, c)| Point::with_channel(x, y, c))
                .collect(),
            record
                .target_x
                .into_iter()
                .map(|(x, c)| Input::with_channel(x, c))
                .collect(),
            record.target_y,
        )
    }
}

pub fn write_tasks_jsonl<W: Write>(mut out: W, tasks: &[Task]) -> Result<()> {
    for task in tasks {
        writeln!(out, "{}", task.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_tasks_jsonl<R: BufRead>(input: R) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        tasks.push(Task::from_json_line(&line)?);
    }
    Ok(tasks)
}
