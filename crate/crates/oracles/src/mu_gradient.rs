//! The kernel center gradient: tape autodiff against the closed form and
//! central differences, its sign, and gradient ascent onto the gap.

use gelgt_core::attention::{gaussian_kernel, grad_mu_closed_form, KernelBuilder};
use gelgt_numcore::{Tape, Tensor};
use rand::Rng;

use crate::error::Result;

pub const CLOSED_FORM_TOL: f64 = 1e-8;
pub const FINITE_DIFF_TOL: f64 = 1e-5;
pub const ASCENT_STEPS: usize = 200;

/// One `(Δt, μ, σ)` configuration, all in days.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPoint {
    pub delta: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Kernel value and `∂/∂μ` through the tape.
pub fn tape_grad_mu(p: KernelPoint, kernel: KernelBuilder) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let delta = tape.constant(Tensor::scalar(p.delta));
    let mu = tape.leaf(Tensor::scalar(p.mu));
    let sigma = tape.constant(Tensor::scalar(p.sigma));
    let k = kernel(&mut tape, delta, mu, sigma)?;
    let value = tape.value(k).item()?;
    let mut store = gelgt_numcore::ParamStore::new();
    let grads = tape.backward(k, &mut store)?;
    let g = match grads.get(mu) {
        Some(t) => t.item()?,
        None => 0.0,
    };
    Ok((value, g))
}

/// Kernel value through the tape, without gradients.
pub fn tape_value(p: KernelPoint, kernel: KernelBuilder) -> Result<f64> {
    let mut tape = Tape::new();
    let delta = tape.constant(Tensor::scalar(p.delta));
    let mu = tape.constant(Tensor::scalar(p.mu));
    let sigma = tape.constant(Tensor::scalar(p.sigma));
    let k = kernel(&mut tape, delta, mu, sigma)?;
    Ok(tape.value(k).item()?)
}

/// Central difference of the tape-built kernel in `μ` with step `h · σ`.
pub fn central_diff_mu(p: KernelPoint, kernel: KernelBuilder, h: f64) -> Result<f64> {
    let step = h * p.sigma;
    let up = tape_value(KernelPoint { mu: p.mu + step, ..p }, kernel)?;
    let down = tape_value(KernelPoint { mu: p.mu - step, ..p }, kernel)?;
    Ok((up - down) / (2.0 * step))
}

/// `σ ∈ [0.5, 20]`, `Δt ∈ [0, 100]`, `μ = Δt + zσ` with `0.01 ≤ |z| ≤ 4`, so
/// the gradient is bounded away from zero and from underflow.
pub fn random_point(rng: &mut impl Rng) -> KernelPoint {
    let sigma = rng.random_range(0.5..20.0);
    let delta = rng.random_range(0.0..100.0);
    let mut z: f64 = rng.random_range(0.01..4.0);
    if rng.random_bool(0.5) {
        z = -z;
    }
    KernelPoint {
        delta,
        mu: delta + z * sigma,
        sigma,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    /// `μ` after each accepted step, starting with `μ₀`.
    pub mus: Vec<f64>,
    pub steps: usize,
}

/// Gradient ascent on `B(μ)` with a backtracking (Armijo) step: the step size
/// doubles after each accepted move and halves until the move increases `B`
/// sufficiently. Stops once `|μ − Δt| ≤ σ/10` or after `max_steps`.
pub fn gradient_ascent(delta: f64, mu0: f64, sigma: f64, max_steps: usize) -> AscentTrace {
    let mut mu = mu0;
    let mut t = 1.0;
    let mut mus = vec![mu];
    let mut steps = 0;
    while steps < max_steps && (mu - delta).abs() > sigma / 10.0 {
        steps += 1;
        let b = gaussian_kernel(delta, mu, sigma);
        let g = grad_mu_closed_form(delta, mu, sigma);
        if g == 0.0 {
            break;
        }
        t *= 2.0;
        loop {
            let cand = mu + t * g;
            if gaussian_kernel(delta, cand, sigma) >= b + 1e-4 * t * g * g {
                mu = cand;
                break;
            }
            t /= 2.0;
            if t < 1e-300 {
                return AscentTrace { mus, steps };
            }
        }
        mus.push(mu);
    }
    AscentTrace { mus, steps }
}
