//! Central-difference gradient estimates used as an independent check on the tape.

use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `(f(θ + ε e_i) − f(θ − ε e_i)) / 2ε` for every coordinate of `theta`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, theta: &Tensor, eps: f64) -> Tensor {
    let mut probe = theta.clone();
    let mut grad = Tensor::zeros(theta.shape());
    for i in 0..theta.len() {
        let x = theta.data()[i];
        probe.data_mut()[i] = x + eps;
        let hi = f(&probe);
        probe.data_mut()[i] = x - eps;
        let lo = f(&probe);
        probe.data_mut()[i] = x;
        grad.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over matching entries.
pub fn max_rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_rel_error shapes");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
