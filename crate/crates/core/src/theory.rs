//! Convergence-theory quantities for the two-layer model and Monte Carlo
//! probes of the concentration bounds they rely on.
//!
//! Notation: `σ_A` is the smallest nonzero singular value of `A`, `J₀` the
//! Jacobian at initialization, `Lip(J) ≤ B·D·√(n/k)`, `r₀ = ‖y − A g(u,W(0))‖`.
//!
//! - overparametrization condition: `r₀/σ_A < σ_min(J₀)² / (4 Lip(J))`
//! - stability radius `R = σ_min(J₀) / (2 Lip(J))`
//! - trajectory radius `R' = 2 r₀ / (σ_A σ_min(J₀))`; the condition is `R' < R`
//! - residual decay rate `σ_A² σ_min(J₀)² / (4m)`

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{DipError, Result};
use crate::model::{init_network_with, DipNetwork, VDistribution};
use crate::problem::InverseProblem;
use crate::rng::{derive_seed, seeded_rng};

/// Default `C1` in the width requirement `k ≥ C1 κ² n (√n(√log d + 1) + √m)²`.
///
/// Median fitted value on a desk-scale sigmoid phase grid (m = 10, d = 500,
/// n ∈ {20, 40, 60}, η = 1, loss ≤ 1e-7 within 25000 steps, 90% success);
/// see the README for the recipe.
pub const DEFAULT_C1: f64 = 1.2e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub m: usize,
    #[serde(rename = "sigma_A")]
    pub sigma_a: f64,
    #[serde(rename = "kappa_A")]
    pub kappa_a: f64,
    #[serde(rename = "sigma_min_J0")]
    pub sigma_min_j0: f64,
    #[serde(rename = "lip_J_bound")]
    pub lip_j_bound: f64,
    pub init_residual: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "R_prime")]
    pub r_prime: f64,
    pub condition_eq5: bool,
    pub rate: f64,
    pub chernoff_k: usize,
    /// High-probability bound on `init_residual`,
    /// present when the report was built from a network and a problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_residual_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const NOTE_X0: &str =
    "initial-error bound uses the ground truth x_bar for the vector written x0 in its statement";
pub const NOTE_DEGENERATE: &str =
    "sigma_min_J0 is zero: the Jacobian is rank deficient at initialization, so the condition cannot hold";

impl TheoryReport {
    /// Assembles a report from its primitive quantities.
    pub fn from_quantities(
        m: usize,
        sigma_a: f64,
        kappa_a: f64,
        sigma_min_j0: f64,
        lip_j_bound: f64,
        init_residual: f64,
        chernoff_k: usize,
    ) -> Self {
        let mut notes = Vec::new();
        let (condition, r_prime) = if sigma_min_j0 > 0.0 {
            (
                init_residual / sigma_a < sigma_min_j0 * sigma_min_j0 / (4.0 * lip_j_bound),
                2.0 * init_residual / (sigma_a * sigma_min_j0),
            )
        } else {
            notes.push(NOTE_DEGENERATE.to_string());
            (false, f64::INFINITY)
        };
        TheoryReport {
            m,
            sigma_a,
            kappa_a,
            sigma_min_j0,
            lip_j_bound,
            init_residual,
            r: sigma_min_j0 / (2.0 * lip_j_bound),
            r_prime,
            condition_eq5: condition,
            rate: sigma_a * sigma_a * sigma_min_j0 * sigma_min_j0 / (4.0 * m as f64),
            chernoff_k,
            init_residual_bound: None,
            notes,
        }
    }

    /// Upper envelope `r₀ e^{−rate·t}` on `‖y(t) − y‖`.
    pub fn residual_envelope(&self, t: f64) -> f64 {
        self.init_residual * (-self.rate * t).exp()
    }
}

/// Builds the report for a freshly initialized network on `prob`.
pub fn build_report(net: &DipNetwork, prob: &InverseProblem) -> Result<TheoryReport> {
    if net.output_dim() != prob.n() {
        return Err(DipError::DimensionMismatch(format!(
            "network outputs {} values but A has {} columns",
            net.output_dim(),
            prob.n()
        )));
    }
    let n = net.output_dim();
    let sigma_min = net.sigma_min_jacobian()?;
    let init_residual = (&prob.a * net.forward() - &prob.y).norm();
    let chernoff_k = chernoff_required_k(n, &net.activation, net.d_bound, 1.0 / n as f64)?;
    let mut report = TheoryReport::from_quantities(
        prob.m(),
        prob.sigma_a(),
        prob.kappa_a(),
        sigma_min,
        lip_jacobian_bound(net),
        init_residual,
        chernoff_k,
    );
    report.init_residual_bound = Some(init_error_bound(
        &net.activation,
        net.d_bound,
        net.input_dim(),
        prob,
    ));
    report.notes.push(NOTE_X0.to_string());
    Ok(report)
}

/// `B·D·√(n/k)`.
pub fn lip_jacobian_bound(net: &DipNetwork) -> f64 {
    lipschitz_bound(
        net.activation.bound,
        net.d_bound,
        net.output_dim(),
        net.width(),
    )
}

pub fn lipschitz_bound(b: f64, d_bound: f64, n: usize, k: usize) -> f64 {
    b * d_bound * (n as f64 / k as f64).sqrt()
}

/// Smallest `k` with `n·exp(−k C_φ'² / (8 B² D² n)) ≤ target_failure`, i.e.
/// the matrix Chernoff tail for `P[σ_min(J₀) ≤ C_φ'/2]` taken at `δ = 1/2`.
pub fn chernoff_required_k(
    n: usize,
    activation: &ActivationSpec,
    d_bound: f64,
    target_failure: f64,
) -> Result<usize> {
    chernoff_required_k_with(
        n,
        activation.bound,
        d_bound,
        activation.c_phi_prime,
        target_failure,
    )
}

pub fn chernoff_required_k_with(
    n: usize,
    b: f64,
    d_bound: f64,
    c_phi_prime: f64,
    target_failure: f64,
) -> Result<usize> {
    if n == 0 {
        return Err(DipError::ZeroDimension("n"));
    }
    if !(target_failure > 0.0 && target_failure <= 1.0) {
        return Err(DipError::invalid("target_failure", "must lie in (0, 1]"));
    }
    if !(c_phi_prime > 0.0) {
        return Err(DipError::invalid("C_phi_prime", "must be positive"));
    }
    let nf = n as f64;
    let k = 8.0 * b * b * d_bound * d_bound * nf * (nf / target_failure).ln()
        / (c_phi_prime * c_phi_prime);
    Ok((k.ceil() as usize).max(1))
}

/// `⌈C1 κ² n (√n(√log d + 1) + √m)²⌉`.
pub fn required_width(n: usize, m: usize, d: usize, kappa_a: f64, c1: f64) -> usize {
    (c1 * kappa_a * kappa_a * width_scale(n, m, d)).ceil() as usize
}

/// The dimension-dependent factor `n (√n(√log d + 1) + √m)²` of the width bound.
pub fn width_scale(n: usize, m: usize, d: usize) -> f64 {
    let (nf, mf, df) = (n as f64, m as f64, d as f64);
    let inner = nf.sqrt() * (df.ln().max(0.0).sqrt() + 1.0) + mf.sqrt();
    nf * inner * inner
}

/// One observed phase boundary: the smallest width that reached the success
/// target for the given dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub kappa_a: f64,
    pub k: usize,
}

/// Median of `k / (κ² n (√n(√log d + 1) + √m)²)` over observed boundaries.
pub fn calibrate_c1(points: &[BoundaryPoint]) -> Option<f64> {
    let mut ratios: Vec<f64> = points
        .iter()
        .map(|p| p.k as f64 / (p.kappa_a * p.kappa_a * width_scale(p.n, p.m, p.d)))
        .filter(|r| r.is_finite())
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    Some(median_sorted(&ratios))
}

/// `‖A‖ (C √(n log d) + √n ‖x̄‖_∞ + √m ‖ε‖_∞)` with `C = C_φ + √2 B D`.
pub fn init_error_bound(
    activation: &ActivationSpec,
    d_bound: f64,
    d: usize,
    prob: &InverseProblem,
) -> f64 {
    let (n, m) = (prob.n() as f64, prob.m() as f64);
    let c = activation.c_phi + std::f64::consts::SQRT_2 * activation.bound * d_bound;
    let log_d = (d as f64).ln().max(0.0);
    prob.operator_norm()
        * (c * (n * log_d).sqrt() + n.sqrt() * prob.x_bar.amax() + m.sqrt() * prob.eps.amax())
}

/// Summary of a Monte Carlo probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub trials: usize,
    /// Trials meeting the probe's criterion.
    pub successes: usize,
    pub fraction: f64,
    /// The threshold (or bound) the statistic was compared against; for
    /// per-trial bounds this is their median.
    pub threshold: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn order_stats(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(f64::total_cmp);
    (values[0], median_sorted(&values), values[values.len() - 1])
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 10 {
        return Err(DipError::invalid(
            "trials",
            "at least 10 trials are required",
        ));
    }
    Ok(())
}

/// Fraction of fresh initializations with `σ_min(J₀) ≥ C_φ'/2`.
pub fn probe_sigma_min_concentration(
    k: usize,
    d: usize,
    n: usize,
    activation: ActivationSpec,
    v_distribution: VDistribution,
    trials: usize,
    seed: u64,
) -> Result<ProbeSummary> {
    check_trials(trials)?;
    let threshold = activation.c_phi_prime / 2.0;
    let values = (0..trials)
        .into_par_iter()
        .map(|t| {
            let net = init_network_with(
                k,
                d,
                n,
                activation,
                v_distribution,
                derive_seed(seed, t as u64),
            )?;
            net.sigma_min_jacobian()
        })
        .collect::<Result<Vec<f64>>>()?;
    let successes = values.iter().filter(|&&s| s >= threshold).count();
    let (min, median, max) = order_stats(values);
    Ok(ProbeSummary {
        trials,
        successes,
        fraction: successes as f64 / trials as f64,
        threshold,
        min,
        median,
        max,
        notes: Vec::new(),
    })
}

/// Initial residual of one (network, problem) pair against its bound.
pub fn init_error_trial(net: &DipNetwork, prob: &InverseProblem) -> (f64, f64) {
    let residual = (&prob.a * net.forward() - &prob.y).norm();
    let bound = init_error_bound(&net.activation, net.d_bound, net.input_dim(), prob);
    (residual, bound)
}

/// Fraction of trials whose initial residual `‖y(0) − y‖` stays within the
/// initial-error bound, evaluated per trial with that trial's `A`, `x̄`, `ε`.
///
/// `problem_for_seed` draws the problem of each trial (its `n` must match).
/// The reported min/median/max are of the ratio residual / bound.
#[allow(clippy::too_many_arguments)]
pub fn probe_init_error<F>(
    k: usize,
    d: usize,
    n: usize,
    activation: ActivationSpec,
    v_distribution: VDistribution,
    problem_for_seed: F,
    trials: usize,
    seed: u64,
) -> Result<ProbeSummary>
where
    F: Fn(u64) -> Result<InverseProblem> + Sync,
{
    check_trials(trials)?;
    let pairs = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (ps, ns) = crate::rng::trial_streams(derive_seed(seed, t as u64));
            let prob = problem_for_seed(ps)?;
            let net = init_network_with(k, d, n, activation, v_distribution, ns)?;
            if prob.n() != n {
                return Err(DipError::DimensionMismatch(format!(
                    "problem generator returned n = {}, expected {n}",
                    prob.n()
                )));
            }
            Ok(init_error_trial(&net, &prob))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let successes = pairs.iter().filter(|(r, b)| r <= b).count();
    let mut bounds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    bounds.sort_by(f64::total_cmp);
    let (min, median, max) = order_stats(pairs.iter().map(|(r, b)| r / b).collect());
    Ok(ProbeSummary {
        trials,
        successes,
        fraction: successes as f64 / trials as f64,
        threshold: median_sorted(&bounds),
        min,
        median,
        max,
        notes: vec![NOTE_X0.to_string()],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSummary {
    pub pairs: usize,
    pub bound: f64,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Samples pairs `(W, W̃)` and compares `‖J(W) − J(W̃)‖ / ‖W − W̃‖_F` with
/// `B·D·√(n/k)`.
///
/// `W` is a fresh N(0,1) draw. Even pairs perturb it with Gaussian noise,
/// odd pairs along `u` (the direction that moves every pre-activation and
/// comes closest to the bound); the perturbation scale is log-uniform in
/// `[1e-3, 10]`.
pub fn probe_jacobian_lipschitz(
    net: &DipNetwork,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzSummary> {
    let bound = lip_jacobian_bound(net);
    let (k, d) = (net.width(), net.input_dim());
    let ratios = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = seeded_rng(derive_seed(seed, p as u64));
            let mut probe = net.clone();
            probe.w = DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let scale = 10f64.powf(rng.random_range(-3.0..1.0));
            let other = if p % 2 == 0 {
                &probe.w
                    + DMatrix::from_fn(k, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
            } else {
                let a = nalgebra::DVector::from_fn(k, |_, _| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                });
                &probe.w + a * probe.u.transpose()
            };
            let num = probe.jacobian_difference_norm(&other)?;
            Ok(num / (&probe.w - &other).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LipschitzSummary {
        pairs,
        bound,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        violations: ratios.iter().filter(|&&r| r > bound).count(),
    })
}
