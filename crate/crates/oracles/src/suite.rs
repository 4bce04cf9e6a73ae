//! The full verification suite and its report format.

use gelgt_core::attention::{gaussian_kernel_on_tape, KernelBuilder};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::euler::{layer_ratio_gain, ratio_gain};
use crate::katz::{
    erdos_renyi, hop_sensitivity, katz_series, katz_solve, path_graph, structural_loss_ratio, KatzParams, SERIES_TOL,
};
use crate::mu_gradient::{
    central_diff_mu, gradient_ascent, random_point, rel_err, tape_grad_mu, ASCENT_STEPS, CLOSED_FORM_TOL,
    FINITE_DIFF_TOL,
};
use crate::snr::{random_neighborhood, refine_trial};

/// One named check. `worst_margin ≥ 0` exactly when every trial passed;
/// it is the smallest distance to the failure threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub trials: usize,
    pub passed: usize,
    pub worst_margin: f64,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }

    /// Builds a report from per-trial margins; a trial passes when its margin is `≥ 0`.
    pub fn from_margins(check: &str, margins: &[f64]) -> Self {
        Self {
            check: check.to_string(),
            trials: margins.len(),
            passed: margins.iter().filter(|m| **m >= 0.0).count(),
            worst_margin: margins.iter().copied().fold(f64::INFINITY, |a, b| {
                if b.is_nan() || a.is_nan() {
                    f64::NAN
                } else {
                    a.min(b)
                }
            }),
        }
    }
}

pub const GROUPS: [&str; 6] = ["katz", "structural", "hop", "snr", "mu", "euler"];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Run only the named group.
    pub only: Option<String>,
    pub graph_trials: usize,
    pub graph_nodes: usize,
    pub edge_probability: f64,
    pub katz_c: f64,
    pub snr_trials: usize,
    pub mu_samples: usize,
    pub ascent_trials: usize,
    /// Kernel under test for the center-gradient checks.
    pub kernel: KernelBuilder,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            only: None,
            graph_trials: 50,
            graph_nodes: 100,
            edge_probability: 0.05,
            katz_c: 0.1,
            snr_trials: 100,
            mu_samples: 1000,
            ascent_trials: 100,
            kernel: gaussian_kernel_on_tape,
        }
    }
}

fn rng_for(seed: u64, group: &str) -> ChaCha8Rng {
    let salt = group.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Runs the selected groups in a fixed order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let wants = |g: &str| opts.only.as_deref().is_none_or(|o| o == g);
    if wants("katz") {
        out.extend(katz_checks(opts)?);
    }
    if wants("structural") {
        out.extend(structural_checks(opts)?);
    }
    if wants("hop") {
        out.extend(hop_checks()?);
    }
    if wants("snr") {
        out.extend(snr_checks(opts)?);
    }
    if wants("mu") {
        out.extend(mu_checks(opts)?);
    }
    if wants("euler") {
        out.extend(euler_checks(opts)?);
    }
    Ok(out)
}

fn random_graphs(opts: &SuiteOptions, group: &str) -> Vec<DMatrix<f64>> {
    let mut rng = rng_for(opts.seed, group);
    (0..opts.graph_trials)
        .map(|_| erdos_renyi(opts.graph_nodes, opts.edge_probability, &mut rng))
        .collect()
}

pub fn katz_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let path = path_graph(2);
    let c = katz_series(&path, &KatzParams::with_lambda(0.1))?;
    let expected = 0.1 / 0.9;
    let path_margins: Vec<f64> = c.iter().map(|v| 1e-12 - (v - expected).abs()).collect();

    let mut margins = Vec::with_capacity(opts.graph_trials + 1);
    let mut graphs = random_graphs(opts, "katz");
    graphs.push(path_graph(7));
    for a in &graphs {
        let p = KatzParams::scaled(a, opts.katz_c);
        let series = katz_series(a, &p)?;
        let solved = katz_solve(a, p.lambda)?;
        margins.push(1e-9 - (series - solved).amax());
    }
    Ok(vec![
        CheckReport::from_margins("katz_two_path", &path_margins),
        CheckReport::from_margins("katz_series_vs_solve", &margins),
    ])
}

pub fn structural_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let bound = opts.katz_c * opts.katz_c + 1e-12;
    let mut margins = Vec::with_capacity(opts.graph_trials);
    for a in random_graphs(opts, "structural") {
        let p = KatzParams::scaled(&a, opts.katz_c);
        margins.push(bound - structural_loss_ratio(&a, &p)?);
    }
    let path_ratio = structural_loss_ratio(&path_graph(2), &KatzParams::with_lambda(0.1))?;
    Ok(vec![
        CheckReport::from_margins("structural_loss_bound", &margins),
        CheckReport::from_margins("structural_loss_two_path", &[SERIES_TOL - (path_ratio - 0.01).abs()]),
    ])
}

/// 2-hop over 1-hop sensitivity of the endpoint of a 3-node path.
pub fn path_hop_ratio(lambda: f64) -> Result<f64> {
    let a = path_graph(3);
    let p = KatzParams::with_lambda(lambda);
    Ok(hop_sensitivity(&a, 0, 2, &p)? / hop_sensitivity(&a, 0, 1, &p)?)
}

pub fn hop_checks() -> Result<Vec<CheckReport>> {
    let r_full = path_hop_ratio(0.1)?;
    let r_half = path_hop_ratio(0.05)?;
    // expected factor 2, accepted within a factor of 3 either way
    let factor = r_full / r_half;
    let band = (factor - 2.0 / 3.0).min(6.0 - factor);
    Ok(vec![
        CheckReport::from_margins("hop_sensitivity_ratio", &[0.3 - r_full]),
        CheckReport::from_margins("hop_sensitivity_lambda_scaling", &[band]),
    ])
}

pub fn snr_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let canon = refine_trial(&[0.25; 4], &[0.9, 0.9, 0.0, 0.0], 1.0, 1.0)?;
    let canon_margin = 1e-12 - (canon.before - 0.81).abs().max((canon.after - 1.62).abs());
    let mut rng = rng_for(opts.seed, "snr");
    let mut margins = Vec::with_capacity(opts.snr_trials);
    while margins.len() < opts.snr_trials {
        let (w, m) = random_neighborhood(&mut rng);
        let sigma = rng.random_range(0.5..2.0);
        let h = rng.random_range(0.5..2.0);
        let t = refine_trial(&w, &m, sigma, h)?;
        if t.dropped == 0 {
            continue;
        }
        margins.push(t.after - t.before);
    }
    Ok(vec![
        CheckReport::from_margins("snr_canonical", &[canon_margin]),
        CheckReport::from_margins("snr_refinement", &margins),
    ])
}

pub fn mu_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut rng = rng_for(opts.seed, "mu");
    let n = opts.mu_samples;
    let (mut closed, mut fd, mut sign) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let p = random_point(&mut rng);
        let (_, g) = tape_grad_mu(p, opts.kernel)?;
        let exact = gelgt_core::attention::grad_mu_closed_form(p.delta, p.mu, p.sigma);
        closed.push(CLOSED_FORM_TOL - rel_err(g, exact));
        let numeric = central_diff_mu(p, opts.kernel, 1e-5)?;
        fd.push(FINITE_DIFF_TOL - rel_err(g, numeric));
        // positive exactly when the gradient points from μ toward Δt
        sign.push(g * (p.delta - p.mu).signum());
    }
    let mut ascent = Vec::with_capacity(opts.ascent_trials);
    for i in 0..opts.ascent_trials {
        let sigma = rng.random_range(0.5..20.0);
        let delta = rng.random_range(0.0..100.0);
        let z = if i % 2 == 0 { -5.0 } else { rng.random_range(-5.0..5.0) };
        let trace = gradient_ascent(delta, delta + z * sigma, sigma, ASCENT_STEPS);
        let dist: Vec<f64> = trace.mus.iter().map(|m| (m - delta).abs()).collect();
        let monotone = dist.windows(2).all(|w| w[1] <= w[0]);
        let final_gap = 0.1 - dist.last().copied().unwrap_or(f64::INFINITY) / sigma;
        ascent.push(if monotone { final_gap } else { -1.0 });
    }
    Ok(vec![
        CheckReport::from_margins("mu_gradient_closed_form", &closed),
        CheckReport::from_margins("mu_gradient_finite_difference", &fd),
        CheckReport::from_margins("mu_gradient_sign", &sign),
        CheckReport::from_margins("mu_gradient_ascent", &ascent),
    ])
}

pub fn euler_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let e = std::f64::consts::E;
    let tiny = (-5000.0f64).exp();
    let canonical = ratio_gain(0.0, 1.0, tiny);
    let layer = layer_ratio_gain()?;
    let mut rng = rng_for(opts.seed, "euler");
    let shifts: Vec<f64> = (0..100)
        .map(|_| {
            let c = rng.random_range(-50.0..50.0);
            1e-9 - (ratio_gain(c, 1.0, tiny) - canonical).abs()
        })
        .collect();
    let neutral = ratio_gain(rng.random_range(-5.0..5.0), 0.0, 0.0);
    Ok(vec![
        CheckReport::from_margins("euler_ratio", &[1e-6 - (canonical - e).abs(), 1e-6 - (layer - e).abs()]),
        CheckReport::from_margins("euler_shift_invariance", &shifts),
        CheckReport::from_margins("euler_zero_bias", &[1e-12 - (neutral - 1.0).abs()]),
    ])
}
