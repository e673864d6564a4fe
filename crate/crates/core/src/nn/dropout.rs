use super::{NnError, Result};
use crate::numcore::{Rng, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::DropoutRate(rate));
        }
        Ok(DropoutSpec { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Per-element multipliers applied by a dropout pass: `0` for dropped,
/// `1/(1−rate)` for kept. `None` means identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Tensor>);

impl DropoutMask {
    pub fn backward(&self, dy: &Tensor) -> Result<Tensor> {
        match &self.0 {
            Some(m) => Ok(dy.mul(m)?),
            None => Ok(dy.clone()),
        }
    }
}

/// Inverted dropout. One uniform draw per element in row-major order, and
/// only in training mode with a nonzero rate.
pub fn dropout_forward(
    spec: DropoutSpec,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> (Tensor, DropoutMask) {
    if !training || spec.rate == 0.0 {
        return (x.clone(), DropoutMask(None));
    }
    let keep = 1.0 / (1.0 - spec.rate);
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        *m = if rng.next_uniform() < spec.rate { 0.0 } else { keep };
    }
    let y = x.mul(&mask).expect("mask shares x's shape");
    (y, DropoutMask(Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let mut rng = Rng::new(1);
        let (y, _) = dropout_forward(DropoutSpec::new(0.0).unwrap(), &x, true, &mut rng);
        assert_eq!(y, x);
        let (y, _) = dropout_forward(DropoutSpec::new(0.9).unwrap(), &x, false, &mut rng);
        assert_eq!(y, x);
        // identity passes draw nothing
        assert_eq!(rng, Rng::new(1));
    }

    #[test]
    fn half_rate_preserves_mean() {
        let x = Tensor::filled(&[100_000], 1.0);
        let (y, mask) = dropout_forward(DropoutSpec::new(0.5).unwrap(), &x, true, &mut Rng::new(3));
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let dy = mask.backward(&x).unwrap();
        assert_eq!(dy, y);
    }

    #[test]
    fn rate_must_be_below_one() {
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DropoutSpec::new(-0.1).is_err());
    }
}
