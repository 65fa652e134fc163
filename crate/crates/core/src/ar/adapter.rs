//! The uniform "marginals given a conditioning set" interface.

use nalgebra::DVector;

use crate::data::{Input, MarginalPrediction, Point};
use crate::error::Result;
use crate::gp::GpModel;
use crate::mixture::FunctionMixture;
use crate::neural::CnpModel;

use super::OutputTransform;

/// A CNP-like predictor. Outputs in `context` and in the returned marginals
/// live in the transformed (model) space.
pub trait ModelAdapter: Sync {
    fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction>;

    fn transform(&self) -> OutputTransform {
        OutputTransform::Identity
    }

    /// Largest conditioning-set size the model was trained on, if known.
    fn max_context(&self) -> Option<usize> {
        None
    }

    /// A growing conditioning set. Adapters may override this to avoid
    /// recomputing work on every push.
    fn conditioner<'a>(&'a self, context: &[Point]) -> Result<Box<dyn Conditioner + 'a>> {
        Ok(Box::new(SetConditioner {
            adapter: self,
            points: context.to_vec(),
        }))
    }
}

pub trait Conditioner {
    fn push(&mut self, points: &[Point]) -> Result<()>;
    fn predict(&self, targets: &[Input]) -> Result<MarginalPrediction>;
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct SetConditioner<'a, A: ?Sized> {
    adapter: &'a A,
    points: Vec<Point>,
}

impl<A: ModelAdapter + ?Sized> Conditioner for SetConditioner<'_, A> {
    fn push(&mut self, points: &[Point]) -> Result<()> {
        self.points.extend_from_slice(points);
        Ok(())
    }

    fn predict(&self, targets: &[Input]) -> Result<MarginalPrediction> {
        self.adapter.predict(&self.points, targets)
    }

    fn len(&self) -> usize {
        self.points.len()
    }
}

fn xs(targets: &[Input]) -> Vec<f64> {
    targets.iter().map(|t| t.x).collect()
}

/// Running sum of encodings; one encoder pass per pushed point.
struct CnpConditioner<'a> {
    model: &'a CnpModel,
    sum: DVector<f64>,
    count: usize,
}

impl Conditioner for CnpConditioner<'_> {
    fn push(&mut self, points: &[Point]) -> Result<()> {
        if points.is_empty() {
            return Ok(());
        }
        let enc = self.model.encode(points)?;
        for row in enc.row_iter() {
            self.sum += row.transpose();
        }
        self.count += points.len();
        Ok(())
    }

    fn predict(&self, targets: &[Input]) -> Result<MarginalPrediction> {
        let encoding = if self.count == 0 {
            self.model.empty_encoding()
        } else {
            &self.sum / self.count as f64
        };
        self.model.decode(&encoding, targets)
    }

    fn len(&self) -> usize {
        self.count
    }
}

impl ModelAdapter for CnpModel {
    fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
        CnpModel::predict(self, context, targets)
    }

    fn transform(&self) -> OutputTransform {
        self.config().transform
    }

    fn max_context(&self) -> Option<usize> {
        self.config().max_context
    }

    fn conditioner<'a>(&'a self, context: &[Point]) -> Result<Box<dyn Conditioner + 'a>> {
        let mut c = CnpConditioner {
            model: self,
            sum: DVector::zeros(self.config().latent_dim),
            count: 0,
        };
        c.push(context)?;
        Ok(Box::new(c))
    }
}

/// Ideal CNP for GP data: exact posterior marginals of the noisy outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealCnpGp(pub GpModel);

impl ModelAdapter for IdealCnpGp {
    fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
        crate::gp::ideal_cnp_gp(&self.0, context, &xs(targets))
    }
}

/// Ideal CNP for the three-function mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealCnpMixture(pub FunctionMixture);

impl ModelAdapter for IdealCnpMixture {
    fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
        crate::mixture::ideal_cnp_mixture(&self.0, context, &xs(targets))
    }
}

/// Factorized Gaussian with the context's empirical moments (population
/// standard deviation, floored); `N(0, 1)` for an empty context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrivialBaseline {
    pub std_floor: f64,
}

impl Default for TrivialBaseline {
    fn default() -> Self {
        Self { std_floor: 1e-3 }
    }
}

impl ModelAdapter for TrivialBaseline {
    fn predict(&self, context: &[Point], targets: &[Input]) -> Result<MarginalPrediction> {
        let (mean, std) = if context.is_empty() {
            (0.0, 1.0)
        } else {
            let n = context.len() as f64;
            let mean = context.iter().map(|p| p.y).sum::<f64>() / n;
            let var = context.iter().map(|p| (p.y - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(self.std_floor))
        };
        MarginalPrediction::new(vec![mean; targets.len()], vec![std * std; targets.len()])
    }
}
