use super::{NnError, Result};
use crate::numcore::{glorot_uniform, matmul, matmul_nt, matmul_tn, Rng, Tensor};
use serde::{Deserialize, Serialize};

/// Fully connected layer `y = x·W + b`, `W [in×out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(rng: &mut Rng, input: usize, output: usize) -> Self {
        DenseLayer {
            w: glorot_uniform(rng, input, output),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// `x` is `[n×in]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        let mut y = matmul(x, &self.w)?;
        let out = self.output_dim();
        for row in y.data_mut().chunks_mut(out) {
            for (v, b) in row.iter_mut().zip(self.b.data()) {
                *v += b;
            }
        }
        Ok((y, DenseCache { x: x.clone() }))
    }

    /// Returns parameter gradients and `dx`.
    pub fn backward(&self, cache: &DenseCache, dy: &Tensor) -> Result<(DenseGrads, Tensor)> {
        if dy.shape().len() != 2 || dy.shape()[1] != self.output_dim() || dy.rows() != cache.x.rows() {
            return Err(NnError::StaleCache(format!(
                "dense cache for {:?} input, got dy {:?}",
                cache.x.shape(),
                dy.shape()
            )));
        }
        let dw = matmul_tn(&cache.x, dy)?;
        let db = dy.sum_rows();
        let dx = matmul_nt(dy, &self.w)?;
        Ok((DenseGrads { w: dw, b: db }, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check, Differentiable, GradCheckOptions};

    #[test]
    fn identity_weights_pass_input_through() {
        let layer = DenseLayer {
            w: Tensor::identity(3),
            b: Tensor::zeros(&[3]),
        };
        let x = Tensor::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, 4.0]]);
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bias_gradient_is_column_sum() {
        let mut rng = Rng::new(2);
        let layer = DenseLayer::new(&mut rng, 4, 3);
        let x = glorot_uniform(&mut rng, 5, 4);
        let dy = glorot_uniform(&mut rng, 5, 3);
        let (_, cache) = layer.forward(&x).unwrap();
        let (g, dx) = layer.backward(&cache, &dy).unwrap();
        assert_eq!(g.b, dy.sum_rows());
        assert_eq!(dx.shape(), &[5, 4]);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let layer = DenseLayer::new(&mut Rng::new(0), 4, 3);
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[2, 5])),
            Err(NnError::Num(_))
        ));
    }

    /// Loss `Σ c ⊙ dense(x)` with a fixed random `c`.
    struct DenseFragment {
        layer: DenseLayer,
        x: Tensor,
        c: Tensor,
    }

    impl Differentiable for DenseFragment {
        fn loss(&self) -> f64 {
            let (y, _) = self.layer.forward(&self.x).unwrap();
            y.mul(&self.c).unwrap().sum()
        }
        fn analytic_grads(&self) -> Vec<(String, Tensor)> {
            let (_, cache) = self.layer.forward(&self.x).unwrap();
            let (g, dx) = self.layer.backward(&cache, &self.c).unwrap();
            vec![("w".into(), g.w), ("b".into(), g.b), ("x".into(), dx)]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            vec![
                ("w".into(), &mut self.layer.w),
                ("b".into(), &mut self.layer.b),
                ("x".into(), &mut self.x),
            ]
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let mut frag = DenseFragment {
            layer: DenseLayer::new(&mut rng, 6, 4),
            x: glorot_uniform(&mut rng, 3, 6),
            c: glorot_uniform(&mut rng, 3, 4),
        };
        frag.layer.b = glorot_uniform(&mut rng, 1, 4).reshape(&[4]).unwrap();
        let report = gradient_check(&mut frag, &GradCheckOptions::exhaustive(1e-6));
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 6 * 4 + 4 + 3 * 6);
    }
}
