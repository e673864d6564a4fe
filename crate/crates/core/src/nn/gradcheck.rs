//! Central finite-difference verification of analytic gradients.

use crate::numcore::{Rng, Tensor};
use serde::Serialize;

/// A scalar function of named tensors with a hand-written gradient.
///
/// `analytic_grads` and `params_mut` are matched by name; tensors that
/// appear in `params_mut` but not in `analytic_grads` are treated as having
/// zero analytic gradient (that is what a frozen or unused tensor should give).
pub trait Differentiable {
    fn loss(&self) -> f64;
    fn analytic_grads(&self) -> Vec<(String, Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged by absolute error instead. A central
    /// difference with step 1e-5 carries ~1e-11·|loss| of rounding noise,
    /// so the default of 1e-5 keeps that noise far below the tolerances used.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (sampled with `seed`).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    /// Every coordinate of every tensor.
    pub fn exhaustive(tolerance: f64) -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance,
            floor: 1e-5,
            max_per_tensor: None,
            seed: 0,
        }
    }

    pub fn sampled(tolerance: f64, per_tensor: usize, seed: u64) -> Self {
        GradCheckOptions {
            max_per_tensor: Some(per_tensor),
            seed,
            ..GradCheckOptions::exhaustive(tolerance)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: Option<String>,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub tensors: Vec<TensorCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn gradient_check(fragment: &mut dyn Differentiable, opts: &GradCheckOptions) -> GradCheckReport {
    let analytic = fragment.analytic_grads();
    let names: Vec<(String, usize)> = fragment
        .params_mut()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_tensor: None,
        worst_index: None,
        checked: 0,
        tolerance: opts.tolerance,
        passed: true,
        tensors: Vec::new(),
    };

    for (pi, (name, size)) in names.iter().enumerate() {
        let grad = analytic.iter().find(|(n, _)| n == name).map(|(_, g)| g);
        let indices = sample_indices(&mut rng, *size, opts.max_per_tensor);
        let mut tensor_max: f64 = 0.0;
        for &i in &indices {
            let original = fragment.params_mut()[pi].1.data()[i];
            fragment.params_mut()[pi].1.data_mut()[i] = original + opts.step;
            let plus = fragment.loss();
            fragment.params_mut()[pi].1.data_mut()[i] = original - opts.step;
            let minus = fragment.loss();
            fragment.params_mut()[pi].1.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric, opts.floor);
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = err;
                report.worst_tensor = Some(name.clone());
                report.worst_index = Some(i);
            }
            tensor_max = tensor_max.max(err);
        }
        report.checked += indices.len();
        report.tensors.push(TensorCheck {
            name: name.clone(),
            size: *size,
            checked: indices.len(),
            max_rel_err: tensor_max,
        });
    }
    report.passed = report.max_rel_err < opts.tolerance;
    report
}

fn sample_indices(rng: &mut Rng, size: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < size => {
            let mut all: Vec<usize> = (0..size).collect();
            // partial Fisher–Yates: the first k slots end up a uniform sample
            for i in 0..k {
                let j = i + rng.below(size - i);
                all.swap(i, j);
            }
            let mut picked = all[..k].to_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..size).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        x: Tensor,
        wrong: bool,
    }

    impl Differentiable for Quadratic {
        fn loss(&self) -> f64 {
            self.x.data().iter().map(|v| v * v * v).sum()
        }
        fn analytic_grads(&self) -> Vec<(String, Tensor)> {
            let k = if self.wrong { 2.0 } else { 3.0 };
            vec![("x".into(), self.x.map(|v| k * v * v))]
        }
        fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            vec![("x".into(), &mut self.x)]
        }
    }

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let mut good = Quadratic { x: x.clone(), wrong: false };
        assert!(gradient_check(&mut good, &GradCheckOptions::exhaustive(1e-7)).passed);
        let mut bad = Quadratic { x, wrong: true };
        let r = gradient_check(&mut bad, &GradCheckOptions::exhaustive(1e-7));
        assert!(!r.passed);
        assert_eq!(r.worst_tensor.as_deref(), Some("x"));
    }

    #[test]
    fn sampling_caps_coordinates_and_restores_values() {
        let x = Tensor::vector((0..40).map(|i| i as f64 * 0.1).collect());
        let mut q = Quadratic { x: x.clone(), wrong: false };
        let r = gradient_check(&mut q, &GradCheckOptions::sampled(1e-6, 5, 3));
        assert_eq!(r.checked, 5);
        assert_eq!(q.x, x);
    }
}
