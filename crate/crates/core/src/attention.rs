//! Multi-head self-attention over all sampled nodes with an additive,
//! learnable Gaussian bias on pairwise time gaps.
//!
//! Per head `h`: `bias_ij = a_h · exp(−(Δ_ij − μ_h)² / (2σ_h²)) + b_h` with
//! `Δ_ij = |Δt_i − Δt_j|` in days and `σ_h = softplus(ρ_h) + σ_min`.

use gelgt_numcore::ops::{softplus, softplus_inv};
use gelgt_numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::layers::{glorot, Linear};

pub const SIGMA_MIN: f64 = 1e-3;
/// Pair gaps beyond this many days (including static rows) are clamped.
pub const DELTA_CAP_DAYS: f64 = 1e6;
pub const INIT_SIGMA_DAYS: f64 = 10.0;

pub fn gaussian_kernel(delta: f64, mu: f64, sigma: f64) -> f64 {
    (-(delta - mu).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// `∂/∂μ exp(−(Δ−μ)²/(2σ²)) = B · (Δ − μ)/σ²`
pub fn grad_mu_closed_form(delta: f64, mu: f64, sigma: f64) -> f64 {
    gaussian_kernel(delta, mu, sigma) * (delta - mu) / (sigma * sigma)
}

pub fn sigma_from_rho(rho: f64) -> f64 {
    softplus(rho) + SIGMA_MIN
}

pub fn rho_for_sigma(sigma: f64) -> f64 {
    softplus_inv(sigma - SIGMA_MIN)
}

/// Builds a kernel on the tape from gaps, a `[1,1]` center and a `[1,1]` width.
pub type KernelBuilder = fn(&mut Tape, Var, Var, Var) -> gelgt_numcore::Result<Var>;

/// The Gaussian kernel from tape primitives, so its gradient is checked
/// through the generic backward rules.
pub fn gaussian_kernel_on_tape(
    tape: &mut Tape,
    delta: Var,
    mu: Var,
    sigma: Var,
) -> gelgt_numcore::Result<Var> {
    let neg_mu = tape.scale(mu, -1.0);
    let diff = tape.add_scalar(delta, neg_mu)?;
    let sq = tape.square(diff);
    let s2 = tape.square(sigma);
    let den = tape.scale(s2, 2.0);
    let z = tape.div_scalar(sq, den)?;
    let neg = tape.scale(z, -1.0);
    Ok(tape.exp(neg))
}

/// `|Δt_i − Δt_j|` in days, clamped to [`DELTA_CAP_DAYS`]; NaN gaps clamp too.
pub fn pair_gaps(delta_days: &[f64]) -> Tensor {
    let n = delta_days.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let g = (delta_days[i] - delta_days[j]).abs();
            let g = if g.is_nan() { DELTA_CAP_DAYS } else { g.min(DELTA_CAP_DAYS) };
            out.set(i, j, g);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub n_heads: usize,
    pub d: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
    /// `[1, H]` each.
    pub mu: ParamId,
    pub rho: ParamId,
    pub scale: ParamId,
    pub shift: ParamId,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Var,
    /// Row-stochastic `[N, N]` attention per head.
    pub weights: Vec<Var>,
}

impl AttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(CoreError::Config(format!(
                "d = {d} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            n_heads,
            d,
            wq: store.add(format!("{name}.wq"), glorot(rng, d, d)),
            wk: store.add(format!("{name}.wk"), glorot(rng, d, d)),
            wv: store.add(format!("{name}.wv"), glorot(rng, d, d)),
            out: Linear::new(store, &format!("{name}.out"), d, d, true, rng),
            mu: store.add(format!("{name}.mu"), Tensor::zeros(&[1, n_heads])),
            rho: store.add(
                format!("{name}.rho"),
                Tensor::full(&[1, n_heads], rho_for_sigma(INIT_SIGMA_DAYS)),
            ),
            scale: store.add(format!("{name}.bias_scale"), Tensor::full(&[1, n_heads], 1.0)),
            shift: store.add(format!("{name}.bias_shift"), Tensor::zeros(&[1, n_heads])),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn mu_days(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.mu).data().to_vec()
    }

    pub fn sigma_days(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.rho).data().iter().map(|&r| sigma_from_rho(r)).collect()
    }

    /// Bias matrix of `head` over precomputed gaps.
    pub fn bias_matrix(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gaps: Var,
        head: usize,
        kernel: KernelBuilder,
    ) -> Result<Var> {
        let pick = |tape: &mut Tape, id: ParamId| -> Result<Var> {
            let p = tape.param(store, id);
            Ok(tape.slice_cols(p, head, head + 1)?)
        };
        let mu = pick(tape, self.mu)?;
        let rho = pick(tape, self.rho)?;
        let a = pick(tape, self.scale)?;
        let b = pick(tape, self.shift)?;
        let sp = tape.softplus(rho);
        let sigma = tape.add_const(sp, SIGMA_MIN);
        let k = kernel(tape, gaps, mu, sigma)?;
        let scaled = tape.mul_scalar(k, a)?;
        Ok(tape.add_scalar(scaled, b)?)
    }

    /// Attention over all `N` rows of `h`. With `use_bias = false` this is
    /// plain scaled dot-product attention.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        delta_days: &[f64],
        use_bias: bool,
    ) -> Result<AttentionOutput> {
        self.forward_with(tape, store, h, delta_days, use_bias, gaussian_kernel_on_tape)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        delta_days: &[f64],
        use_bias: bool,
        kernel: KernelBuilder,
    ) -> Result<AttentionOutput> {
        let shape = tape.shape(h).to_vec();
        if shape.len() != 2 || shape[1] != self.d || shape[0] != delta_days.len() {
            return Err(CoreError::Data(format!(
                "attention input {shape:?} with {} time gaps, width {}",
                delta_days.len(),
                self.d
            )));
        }
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;
        let gaps = use_bias.then(|| tape.constant(pair_gaps(delta_days)));
        let hd = self.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let (lo, hi) = (head * hd, (head + 1) * hd);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let raw = tape.matmul_nt(qh, kh)?;
            let mut scores = tape.scale(raw, inv_sqrt);
            if let Some(gaps) = gaps {
                let bias = self.bias_matrix(tape, store, gaps, head, kernel)?;
                scores = tape.add(scores, bias)?;
            }
            let a = tape.softmax_rows(scores);
            weights.push(a);
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let out = self.out.forward(tape, store, cat)?;
        Ok(AttentionOutput { out, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_reference_values() {
        assert_eq!(gaussian_kernel(3.0, 3.0, 2.0), 1.0);
        assert!((gaussian_kernel(1.0, 0.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(10.0, 0.0, 1.0) - 1.928_749_847_963_918e-22).abs() < 1e-33);
    }

    #[test]
    fn closed_form_gradient_reference_values() {
        assert_eq!(grad_mu_closed_form(1.5, 1.5, 0.7), 0.0);
        assert!((grad_mu_closed_form(2.0, 0.0, 1.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((grad_mu_closed_form(2.0, 0.0, 1.0) - 0.270_670_566_473_225_4).abs() < 1e-15);
    }

    #[test]
    fn initial_sigma_is_ten_days() {
        assert!((sigma_from_rho(rho_for_sigma(INIT_SIGMA_DAYS)) - INIT_SIGMA_DAYS).abs() < 1e-12);
        assert!(sigma_from_rho(-1e6) >= SIGMA_MIN);
    }

    #[test]
    fn gaps_are_symmetric_and_capped() {
        let g = pair_gaps(&[0.0, 2.5, f64::INFINITY]);
        assert_eq!(g.get(0, 1), 2.5);
        assert_eq!(g.get(1, 0), 2.5);
        assert_eq!(g.get(0, 2), DELTA_CAP_DAYS);
        assert_eq!(g.get(2, 2), DELTA_CAP_DAYS);
    }
}
