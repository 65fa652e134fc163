use serde::{Deserialize, Serialize};

use crate::data::{Point, Task};
use crate::error::{Error, Result};

/// Map applied to outputs before they reach a model. Models predict Gaussians
/// in the transformed space; samples are mapped back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    #[default]
    Identity,
    /// `y ↦ log(1 + y)`, for positive quantities such as population counts.
    Log1p,
}

impl OutputTransform {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Log1p => "log1p",
        }
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        match self {
            Self::Identity => Ok(y),
            Self::Log1p => {
                if y > -1.0 {
                    Ok(y.ln_1p())
                } else {
                    Err(Error::InvalidArgument(format!("log1p transform needs y > -1, got {y}")))
                }
            }
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Self::Identity => z,
            Self::Log1p => z.exp_m1(),
        }
    }

    /// `log |dz/dy|` at `y`, added to model-space densities to get data-space ones.
    pub fn log_jacobian(&self, y: f64) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Log1p => -y.ln_1p(),
        }
    }

    pub fn apply_points(&self, points: &[Point]) -> Result<Vec<Point>> {
        points
            .iter()
            .map(|p| Ok(Point { y: self.forward(p.y)?, ..*p }))
            .collect()
    }

    pub fn apply_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        values.iter().map(|&y| self.forward(y)).collect()
    }

    /// Copy of `task` with context and target outputs transformed.
    pub fn apply_task(&self, task: &Task) -> Result<Task> {
        if *self == Self::Identity {
            return Ok(task.clone());
        }
        Ok(Task {
            context: self.apply_points(&task.context)?,
            targets: task.targets.clone(),
            target_y: task.target_y.as_deref().map(|ys| self.apply_values(ys)).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_roundtrip_and_jacobian() {
        let t = OutputTransform::Log1p;
        for y in [0.0, 0.5, 3.0, 120.0] {
            let z = t.forward(y).unwrap();
            assert!((t.inverse(z) - y).abs() < 1e-12 * (1.0 + y));
            let h = 1e-6;
            let fd = (t.forward(y + h).unwrap() - t.forward(y - h).unwrap()) / (2.0 * h);
            assert!((fd.ln() - t.log_jacobian(y)).abs() < 1e-6);
        }
        assert!(t.forward(-1.0).is_err());
    }

    #[test]
    fn identity_is_a_no_op() {
        let task = Task::new(vec![Point::new(0.1, -3.0)], crate::data::inputs(&[0.2]), Some(vec![-7.0])).unwrap();
        assert_eq!(OutputTransform::Identity.apply_task(&task).unwrap(), task);
    }
}
