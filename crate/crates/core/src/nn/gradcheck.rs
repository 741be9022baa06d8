//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::{Parameters, RngState};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Check at most this many coordinates, chosen with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
    /// A coordinate is treated as sitting on a kink (and skipped) when its
    /// one-sided differences disagree by more than
    /// `kink_tol · (1 + |d⁺| + |d⁻|)`.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords: None,
            seed: 0,
            abs_floor: 1e-3,
            kink_tol: 1e-3,
        }
    }
}

impl GradCheckOptions {
    pub fn sampled(max_coords: usize, seed: u64) -> Self {
        Self {
            max_coords: Some(max_coords),
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, if any was checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: Self) -> Self {
        let (max_rel_error, worst_index) = if other.max_rel_error > self.max_rel_error {
            (other.max_rel_error, other.worst_index)
        } else {
            (self.max_rel_error, self.worst_index)
        };
        Self {
            max_rel_error,
            worst_index,
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Compares `analytic` against central differences of `f` around `point`.
///
/// `f` must be deterministic (dropout in eval mode).
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let indices: Vec<usize> = match opts.max_coords {
        Some(m) if m < point.len() => {
            let mut rng = RngState::new(opts.seed);
            let mut v = sample(rng.rng(), point.len(), m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..point.len()).collect(),
    };

    let mut x = point.to_vec();
    let f0 = f(&x);
    let mut report = GradCheckReport::default();
    for i in indices {
        let orig = x[i];
        x[i] = orig + opts.eps;
        let fp = f(&x);
        x[i] = orig - opts.eps;
        let fm = f(&x);
        x[i] = orig;

        let forward = (fp - f0) / opts.eps;
        let backward = (f0 - fm) / opts.eps;
        if (forward - backward).abs() > opts.kink_tol * (1.0 + forward.abs() + backward.abs()) {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(opts.abs_floor);
        let err = (analytic[i] - numeric).abs() / denom;
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_index = Some(i);
        }
    }
    report
}

/// Checks the gradients already accumulated in `model`'s parameters
/// against finite differences of `loss`, parameter by parameter.
///
/// With `opts.max_coords` set, that many coordinates are sampled from each
/// parameter. Parameter values are restored afterwards.
pub fn check_parameters<M: Parameters<f64> + ?Sized>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut snapshot = Vec::new();
    model.visit_params(&mut |p| snapshot.push((p.value.data().to_vec(), p.grad.data().to_vec())));
    let mut report = GradCheckReport::default();
    for (index, (values, analytic)) in snapshot.iter().enumerate() {
        let set = |model: &mut M, data: &[f64]| {
            let mut i = 0;
            model.visit_params_mut(&mut |p| {
                if i == index {
                    p.value.data_mut().copy_from_slice(data);
                }
                i += 1;
            });
        };
        let sub_opts = GradCheckOptions {
            seed: opts.seed.wrapping_add(index as u64),
            ..opts.clone()
        };
        let r = grad_check(
            |d| {
                set(model, d);
                loss(model)
            },
            values,
            analytic,
            &sub_opts,
        );
        set(model, values);
        report = report.merge(r);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::{relu, relu_backward};
    use crate::nn::dense::{dense_backward, dense_forward};
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let coef = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| x.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
        let r = grad_check(f, &[0.1, 0.2, 0.3], &coef, &GradCheckOptions::default());
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = grad_check(f, &[1.0], &[3.0], &GradCheckOptions::default());
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn dense_relu_composite() {
        // L = Σ relu(xW + b), at points away from the kink.
        let x = Tensor::<f64>::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]]);
        let w = Tensor::from_rows(&[
            vec![0.3, -0.2, 0.8, 0.1],
            vec![-0.5, 0.4, 0.2, 0.9],
            vec![0.7, 0.6, -0.3, -0.4],
        ]);
        let b = Tensor::vector(vec![0.05, -0.1, 0.2, 0.0]);
        let loss = |w: &Tensor<f64>| relu(&dense_forward(&x, w, &b).unwrap()).sum();
        let pre = dense_forward(&x, &w, &b).unwrap();
        let dy = relu_backward(&pre, &Tensor::full(pre.shape(), 1.0));
        let g = dense_backward(&x, &w, &dy).unwrap();
        let r = grad_check(
            |d| loss(&Tensor::from_vec(&[3, 4], d.to_vec()).unwrap()),
            w.data(),
            g.weight.data(),
            &GradCheckOptions::default(),
        );
        assert_eq!(r.skipped, 0);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn relu_kink_is_skipped() {
        let f = |x: &[f64]| x.iter().map(|&v| v.max(0.0)).sum::<f64>();
        let analytic = [0.0, 1.0];
        let r = grad_check(f, &[0.0, 2.0], &analytic, &GradCheckOptions::default());
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn sampling_limits_coordinates() {
        let f = |x: &[f64]| x.iter().sum::<f64>();
        let p = vec![0.5; 100];
        let r = grad_check(f, &p, &[1.0; 100], &GradCheckOptions::sampled(10, 4));
        assert_eq!(r.checked, 10);
    }
}
