//! Autoregressive prediction with auxiliary, marginalized-out rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Input, Point};
use crate::error::{Error, Result};
use crate::gaussian::normal_logpdf;
use crate::mixture::log_sum_exp;
use crate::rng::RngStream;

use super::adapter::ModelAdapter;
use super::engine::{ar_sample, Ordering};
use super::OutputTransform;

/// Equal-weight Gaussian mixture over one output (components in model space).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureMarginal {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub transform: OutputTransform,
}

impl MixtureMarginal {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn logpdf(&self, y: f64) -> Result<f64> {
        let z = self.transform.forward(y)?;
        let terms: Vec<f64> = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(&m, &v)| normal_logpdf(z, m, v))
            .collect();
        Ok(log_sum_exp(&terms) - (terms.len() as f64).ln() + self.transform.log_jacobian(y))
    }
}

/// Input distribution for auxiliary points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformInputs {
    pub lo: f64,
    pub hi: f64,
    pub channel: u8,
}

impl UniformInputs {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, channel: 0 }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Input {
        Input::with_channel(rng.uniform_range(self.lo, self.hi), self.channel)
    }
}

/// Marginals at each of `targets`, each averaged over the same `m`
/// auxiliary rollouts of length `r`. With `r = 0` every marginal has a single
/// component equal to the plain prediction.
pub fn aux_ar_predict_many<A: ModelAdapter + ?Sized>(
    model: &A,
    context: &[Point],
    targets: &[Input],
    aux: &UniformInputs,
    r: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<MixtureMarginal>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one auxiliary trajectory".into()));
    }
    let transform = model.transform();
    let ctx = transform.apply_points(context)?;
    let runs = if r == 0 { 1 } else { m };
    let base = RngStream::new(rng.next_u64());
    let preds = (0..runs)
        .into_par_iter()
        .map(|k| {
            let mut stream = base.fork(k as u64);
            let mut cond = ctx.clone();
            if r > 0 {
                let inputs: Vec<Input> = (0..r).map(|_| aux.sample(&mut stream)).collect();
                let traj = ar_sample(model, context, &inputs, &Ordering::Given((0..r).collect()), 1, &mut stream)?;
                cond.extend(transform.apply_points(&traj.points)?);
            }
            model.predict(&cond, targets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..targets.len())
        .map(|j| MixtureMarginal {
            means: preds.iter().map(|p| p.means[j]).collect(),
            variances: preds.iter().map(|p| p.variances[j]).collect(),
            transform,
        })
        .collect())
}

pub fn aux_ar_predict<A: ModelAdapter + ?Sized>(
    model: &A,
    context: &[Point],
    target: Input,
    aux: &UniformInputs,
    r: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<MixtureMarginal> {
    Ok(aux_ar_predict_many(model, context, &[target], aux, r, m, rng)?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar::IdealCnpMixture;
    use crate::mixture::FunctionMixture;

    #[test]
    fn zero_length_is_the_plain_marginal() {
        let adapter = IdealCnpMixture(FunctionMixture::auxiliary());
        let ctx = vec![Point::new(0.5, 0.3)];
        let x = Input::new(1.0);
        let plain = adapter.predict(&ctx, &[x]).unwrap();
        for m in [1, 16] {
            let mix = aux_ar_predict(&adapter, &ctx, x, &UniformInputs::new(-2.0, 2.0), 0, m, &mut RngStream::new(1)).unwrap();
            assert_eq!(mix.len(), 1);
            assert_eq!((mix.means[0], mix.variances[0]), (plain.means[0], plain.variances[0]));
            let y = 0.7;
            assert!((mix.logpdf(y).unwrap() - plain.logpdf(&[y]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn components_and_reproducibility() {
        let adapter = IdealCnpMixture(FunctionMixture::auxiliary());
        let aux = UniformInputs::new(-2.0, 2.0);
        let a = aux_ar_predict(&adapter, &[], Input::new(0.2), &aux, 4, 8, &mut RngStream::new(3)).unwrap();
        let b = aux_ar_predict(&adapter, &[], Input::new(0.2), &aux, 4, 8, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let mix = MixtureMarginal {
            means: vec![-1.0, 2.0],
            variances: vec![0.5, 0.1],
            transform: OutputTransform::Identity,
        };
        let h = 1e-3;
        let total: f64 = (-10_000..10_000).map(|i| mix.logpdf(i as f64 * h).unwrap().exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
