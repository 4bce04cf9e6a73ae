//! Relevance-to-noise ratio of a weighted neighborhood aggregate, before and
//! after dropping low-relevance neighbors.

use rand::Rng;

use crate::error::{OracleError, Result};

/// Neighbors at or below this relevance are dropped by refinement.
pub const LOW_RELEVANCE: f64 = 0.05;

/// `(‖h‖² / σ²) · (Σ w μ)² / Σ w²`; zero for an empty or all-zero weight set.
pub fn snr(weights: &[f64], relevance: &[f64], sigma_noise: f64, h_norm: f64) -> Result<f64> {
    if weights.len() != relevance.len() {
        return Err(OracleError::Invalid("weights and relevances differ in length".into()));
    }
    if sigma_noise <= 0.0 || !sigma_noise.is_finite() {
        return Err(OracleError::Invalid(format!("noise scale {sigma_noise}")));
    }
    let signal: f64 = weights.iter().zip(relevance).map(|(w, m)| w * m).sum();
    let energy: f64 = weights.iter().map(|w| w * w).sum();
    if energy == 0.0 {
        return Ok(0.0);
    }
    Ok(h_norm * h_norm / (sigma_noise * sigma_noise) * signal * signal / energy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrial {
    pub before: f64,
    /// Survivors keep their original weights.
    pub after: f64,
    /// Survivor weights rescaled to sum to one.
    pub after_renormalized: f64,
    pub dropped: usize,
}

/// SNR of the full neighborhood and of the survivors with relevance above
/// [`LOW_RELEVANCE`].
pub fn refine_trial(weights: &[f64], relevance: &[f64], sigma_noise: f64, h_norm: f64) -> Result<RefinementTrial> {
    let before = snr(weights, relevance, sigma_noise, h_norm)?;
    let (kw, km): (Vec<f64>, Vec<f64>) = weights
        .iter()
        .zip(relevance)
        .filter(|&(_, &m)| m > LOW_RELEVANCE)
        .map(|(&w, &m)| (w, m))
        .unzip();
    let after = snr(&kw, &km, sigma_noise, h_norm)?;
    let total: f64 = kw.iter().sum();
    let renorm: Vec<f64> = if total > 0.0 {
        kw.iter().map(|w| w / total).collect()
    } else {
        kw.clone()
    };
    let after_renormalized = snr(&renorm, &km, sigma_noise, h_norm)?;
    Ok(RefinementTrial {
        before,
        after,
        after_renormalized,
        dropped: weights.len() - kw.len(),
    })
}

/// A neighborhood whose dropped subset is non-empty and carries negligible
/// relevance, the premise under which refinement provably helps: relevant
/// neighbors have `μ ∈ [0.5, 1]`, dropped ones `μ ∈ [0, 10⁻³]`, and all
/// weights are comparable.
pub fn random_neighborhood(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n_relevant = rng.random_range(1..=12);
    let n_noise = rng.random_range(1..=12);
    let mut weights = Vec::with_capacity(n_relevant + n_noise);
    let mut relevance = Vec::with_capacity(n_relevant + n_noise);
    for i in 0..n_relevant + n_noise {
        weights.push(rng.random_range(0.5..1.5));
        relevance.push(if i < n_relevant {
            rng.random_range(0.5..=1.0)
        } else {
            rng.random_range(0.0..=1e-3)
        });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (weights, relevance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_neighborhood() {
        let w = [0.25; 4];
        let m = [0.9, 0.9, 0.0, 0.0];
        let t = refine_trial(&w, &m, 1.0, 1.0).unwrap();
        assert!((t.before - 0.81).abs() < 1e-12);
        assert!((t.after - 1.62).abs() < 1e-12);
        assert_eq!(t.dropped, 2);
    }

    #[test]
    fn irrelevant_neighborhood_has_no_signal() {
        assert_eq!(snr(&[0.5, 0.5], &[0.0, 0.0], 1.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn nothing_dropped_leaves_ratio_unchanged() {
        let t = refine_trial(&[0.2, 0.8], &[0.7, 0.9], 2.0, 1.5).unwrap();
        assert_eq!(t.dropped, 0);
        assert_eq!(t.before, t.after);
    }

    #[test]
    fn bad_noise_scale_is_rejected() {
        assert!(snr(&[1.0], &[1.0], 0.0, 1.0).is_err());
    }
}
