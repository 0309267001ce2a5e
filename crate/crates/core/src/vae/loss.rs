//! Reconstruction likelihoods and the re-weighted VAE objective terms.

use crate::error::{DdmiError, Result};
use crate::tensor::{Element, Tensor};

/// Observation model for the coordinate-wise reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    /// Isotropic-Gaussian families trained, in practice, with an l1 loss
    /// (normalizer dropped; the objective is proportional to the ELBO).
    GaussianL1,
    /// Binary targets against predicted logits.
    Bernoulli,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::GaussianL1 => "gaussian-l1",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian-l1" => Ok(Likelihood::GaussianL1),
            "bernoulli" => Ok(Likelihood::Bernoulli),
            other => Err(DdmiError::Config(format!("unknown likelihood '{other}'"))),
        }
    }
}

/// Mean per-coordinate reconstruction loss. `pred` and `target` are
/// `[N, channels]`; Bernoulli predictions are logits and targets must
/// be exactly 0 or 1.
pub fn reconstruction_loss<E: Element>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    likelihood: Likelihood,
) -> Result<Tensor<E>> {
    if pred.shape() != target.shape() {
        return Err(DdmiError::ShapeMismatch {
            expected: pred.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    if pred.numel() == 0 {
        return Err(DdmiError::EmptyCoordinateSubset);
    }
    match likelihood {
        Likelihood::GaussianL1 => Ok(pred.sub(target)?.abs().mean()),
        Likelihood::Bernoulli => {
            for (i, &t) in target.data().iter().enumerate() {
                let tv = t.to_f64();
                if tv != 0.0 && tv != 1.0 {
                    return Err(DdmiError::NonBinaryTarget { value: tv, index: i });
                }
            }
            // BCE with logits: softplus(x) - x * t
            Ok(pred.softplus().sub(&pred.mul(target)?)?.mean())
        }
    }
}
