use num_complex::Complex64;

use super::schedule::NoiseSchedule;
use crate::autodiff::{score_forward, BoundParams, NetKind, NetworkParams, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::numerics::ComplexImage;

/// Per-pixel iid mixture of isotropic complex Gaussians. `vars[k]` is the
/// total variance `E|z - mean_k|^2` of component `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMixture {
    weights: Vec<f64>,
    means: Vec<Complex64>,
    vars: Vec<f64>,
}

impl ComplexMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Complex64>, vars: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != vars.len() {
            return invalid("mixture needs matching, nonempty weights, means and variances");
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid("mixture weights must be nonnegative and sum to 1");
        }
        if vars.iter().any(|&v| !(v > 0.0)) {
            return invalid("mixture variances must be positive");
        }
        Ok(Self { weights, means, vars })
    }

    /// Score of this mixture convolved with complex noise of variance
    /// `sigma^2`, at a single pixel.
    pub fn score(&self, z: Complex64, sigma: f64) -> Complex64 {
        let s2 = sigma * sigma;
        // log-responsibilities, stabilised by their maximum
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.vars)
            .map(|((&w, &m), &v)| {
                let v = v + s2;
                if w == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.ln() - v.ln() - (z - m).norm_sqr() / v
                }
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for ((&l, &m), &v) in logs.iter().zip(&self.means).zip(&self.vars) {
            let r = (l - top).exp();
            num += r * (m - z) / (v + s2);
            den += r;
        }
        num / den
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreFlavor {
    Learned(NetworkParams),
    /// Every pixel iid complex Gaussian with the given mean and total
    /// variance.
    AnalyticGaussian { mean: Complex64, var: f64 },
    AnalyticMixture(ComplexMixture),
}

/// A score estimate `s(z, sigma)` approximating the gradient of the
/// log-density of the data smoothed with complex noise of variance
/// `sigma^2`, in the convention where `s = (mu - z) / (s^2 + sigma^2)` for
/// Gaussian data.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    pub flavor: ScoreFlavor,
    pub schedule: NoiseSchedule,
}

impl ScoreModel {
    pub fn learned(params: NetworkParams, schedule: NoiseSchedule) -> Result<Self> {
        if params.arch().kind != NetKind::Score {
            return invalid("learned score model needs score-network parameters");
        }
        Ok(Self { flavor: ScoreFlavor::Learned(params), schedule })
    }

    pub fn gaussian(mean: Complex64, var: f64, schedule: NoiseSchedule) -> Result<Self> {
        if !(var > 0.0) {
            return invalid("Gaussian prior variance must be positive");
        }
        Ok(Self { flavor: ScoreFlavor::AnalyticGaussian { mean, var }, schedule })
    }

    pub fn mixture(mixture: ComplexMixture, schedule: NoiseSchedule) -> Self {
        Self { flavor: ScoreFlavor::AnalyticMixture(mixture), schedule }
    }

    pub fn params(&self) -> Option<&NetworkParams> {
        match &self.flavor {
            ScoreFlavor::Learned(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self.flavor, ScoreFlavor::Learned(_))
    }

    /// Value-level score evaluation for any flavor.
    pub fn score(&self, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let zv = tape.constant(Tensor::from_image(z))?;
        let s = bound.eval(&mut tape, zv, sigma)?;
        tape.value(s).to_image()
    }

    /// Records the model's parameters (as constants) on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundScore<'_>> {
        let params = match &self.flavor {
            ScoreFlavor::Learned(p) => Some(p.bind(tape, false)?),
            _ => None,
        };
        Ok(BoundScore { model: self, params })
    }
}

/// Exact score of an analytic model.
pub fn analytic_score(model: &ScoreModel, z: &ComplexImage, sigma: f64) -> Result<ComplexImage> {
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    match &model.flavor {
        ScoreFlavor::Learned(_) => invalid("analytic_score needs an analytic model"),
        ScoreFlavor::AnalyticGaussian { mean, var } => {
            let v = var + sigma * sigma;
            Ok(z.map(|zv| (mean - zv) / v))
        }
        ScoreFlavor::AnalyticMixture(m) => Ok(z.map(|zv| m.score(zv, sigma))),
    }
}

/// A score model bound to a particular tape.
pub struct BoundScore<'m> {
    model: &'m ScoreModel,
    params: Option<BoundParams>,
}

impl BoundScore<'_> {
    pub fn model(&self) -> &ScoreModel {
        self.model
    }

    pub fn eval(&self, tape: &mut Tape, z: Var, sigma: f64) -> Result<Var> {
        if !(sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        match &self.model.flavor {
            ScoreFlavor::Learned(_) => {
                score_forward(tape, self.params.as_ref().expect("learned models bind params"), z, sigma)
            }
            ScoreFlavor::AnalyticGaussian { mean, var } => {
                let shape = tape.value(z).shape().to_vec();
                let (h, w) = (shape[1], shape[2]);
                let mu = tape.constant(Tensor::from_complex(h, w, &vec![*mean; h * w]))?;
                let d = tape.sub(mu, z)?;
                tape.scale(d, 1.0 / (var + sigma * sigma))
            }
            ScoreFlavor::AnalyticMixture(_) => {
                if tape.requires_grad(z) {
                    return Err(Error::InvalidInput("mixture scores are not differentiable on the tape".into()));
                }
                let img = tape.value(z).to_image()?;
                let s = analytic_score(self.model, &img, sigma)?;
                tape.constant(Tensor::from_image(&s))
            }
        }
    }
}
