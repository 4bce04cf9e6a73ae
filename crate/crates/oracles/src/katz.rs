//! Katz centrality `C = Σ_{k≥1} (λA)^k 1` by two independent routes, and the
//! structural quantities derived from it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{OracleError, Result};

pub const SERIES_TOL: f64 = 1e-12;
pub const SERIES_MAX_K: usize = 200;
pub const POWER_STEPS: usize = 200;
pub const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KatzParams {
    pub lambda: f64,
    /// `λ · ρ(A)`, at most 0.1 in the regime of interest.
    pub c: f64,
    pub tol: f64,
    pub max_k: usize,
}

impl KatzParams {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            c: f64::NAN,
            tol: SERIES_TOL,
            max_k: SERIES_MAX_K,
        }
    }

    /// `λ = c / ρ(A)`. A graph without edges gets `λ = 0`.
    pub fn scaled(adjacency: &DMatrix<f64>, c: f64) -> Self {
        let rho = spectral_radius(adjacency);
        Self {
            lambda: if rho > 0.0 { c / rho } else { 0.0 },
            c,
            tol: SERIES_TOL,
            max_k: SERIES_MAX_K,
        }
    }
}

/// Perron root of a nonnegative matrix by power iteration on `A + I`; the
/// shift keeps bipartite graphs from oscillating and is removed at the end.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = a + DMatrix::<f64>::identity(n, n);
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..POWER_STEPS {
        let y = &shifted * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        // Rayleigh quotient of the current unit vector
        let next = x.dot(&y);
        x = y / norm;
        if (next - estimate).abs() <= POWER_TOL * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    (estimate - 1.0).max(0.0)
}

/// Terms `(λA)^k 1` for `k = 1..` until the newest term's norm falls below `tol`.
pub fn katz_terms(a: &DMatrix<f64>, params: &KatzParams) -> Result<Vec<DVector<f64>>> {
    let n = a.nrows();
    let mut term = DVector::from_element(n, 1.0);
    let mut terms = Vec::new();
    for _ in 0..params.max_k {
        term = (a * &term) * params.lambda;
        let norm = term.norm();
        if !norm.is_finite() {
            break;
        }
        terms.push(term.clone());
        if norm < params.tol {
            return Ok(terms);
        }
    }
    Err(OracleError::NonConvergent(format!(
        "λ = {} after {} terms",
        params.lambda, params.max_k
    )))
}

/// Truncated walk series.
pub fn katz_series(a: &DMatrix<f64>, params: &KatzParams) -> Result<DVector<f64>> {
    let n = a.nrows();
    Ok(katz_terms(a, params)?
        .iter()
        .fold(DVector::zeros(n), |acc, t| acc + t))
}

/// `(I − λA)⁻¹ 1 − 1` by LU factorization.
pub fn katz_solve(a: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = a.nrows();
    let m = DMatrix::<f64>::identity(n, n) - a * lambda;
    let ones = DVector::from_element(n, 1.0);
    let x = m
        .lu()
        .solve(&ones)
        .ok_or_else(|| OracleError::NonConvergent(format!("I − λA is singular at λ = {lambda}")))?;
    Ok(x - ones)
}

/// `‖Σ_{k≥3} (λA)^k 1‖ / ‖C‖`, zero when `C` vanishes.
pub fn structural_loss_ratio(a: &DMatrix<f64>, params: &KatzParams) -> Result<f64> {
    let terms = katz_terms(a, params)?;
    let n = a.nrows();
    let total = terms.iter().fold(DVector::zeros(n), |acc, t| acc + t);
    let tail = terms.iter().skip(2).fold(DVector::zeros(n), |acc, t| acc + t);
    let denom = total.norm();
    Ok(if denom == 0.0 { 0.0 } else { tail.norm() / denom })
}

/// Copy of `a` with every edge touching `node` removed.
pub fn remove_node(a: &DMatrix<f64>, node: usize) -> DMatrix<f64> {
    let mut out = a.clone();
    out.row_mut(node).fill(0.0);
    out.column_mut(node).fill(0.0);
    out
}

/// `|C(seed; G) − C(seed; G ∖ removed)|` at a fixed `λ`.
pub fn hop_sensitivity(a: &DMatrix<f64>, seed: usize, removed: usize, params: &KatzParams) -> Result<f64> {
    let n = a.nrows();
    if seed >= n || removed >= n {
        return Err(OracleError::Invalid(format!("node out of range for {n} nodes")));
    }
    if seed == removed {
        return Err(OracleError::Invalid("cannot remove the seed itself".into()));
    }
    let full = katz_series(a, params)?[seed];
    let cut = katz_series(&remove_node(a, removed), params)?[seed];
    Ok((full - cut).abs())
}

/// Undirected `G(n, p)` without self loops.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    a
}

/// Undirected path `0 – 1 – … – (n−1)`.
pub fn path_graph(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n {
        a[(i - 1, i)] = 1.0;
        a[(i, i - 1)] = 1.0;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_path_closed_form() {
        let a = path_graph(2);
        let p = KatzParams::with_lambda(0.1);
        let c = katz_series(&a, &p).unwrap();
        assert!((c[0] - 0.1 / 0.9).abs() < 1e-12);
        assert!((c[1] - 0.1 / 0.9).abs() < 1e-12);
        assert!((spectral_radius(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_scores_zero() {
        let mut a = path_graph(3);
        a = remove_node(&a, 2);
        let c = katz_series(&a, &KatzParams::with_lambda(0.2)).unwrap();
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn divergent_lambda_is_rejected() {
        let a = path_graph(2);
        assert!(katz_series(&a, &KatzParams::with_lambda(1.5)).is_err());
    }

    #[test]
    fn removing_the_seed_is_rejected() {
        let a = path_graph(3);
        assert!(hop_sensitivity(&a, 0, 0, &KatzParams::with_lambda(0.1)).is_err());
    }
}
