//! Smooth activations with bounded first and second derivatives.
//!
//! Besides the scalar maps, every [`ActivationSpec`] carries the constants the
//! convergence analysis is stated in:
//!
//! - `B`: a common bound on `|φ'|` and `|φ''|`,
//! - `C_φ  = sqrt(E[φ(g)²])`, `g ~ N(0,1)`,
//! - `C_φ' = sqrt(E[φ'(g)²])`.
//!
//! The Gaussian moments are computed with Gauss–Hermite quadrature.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DipError, Result};

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_NODES: usize = 200;

/// Two quadrature estimates closer than this are considered converged.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Softplus,
    Linear,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Softplus,
        ActivationKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Linear => "linear",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = DipError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            "softplus" => Ok(ActivationKind::Softplus),
            "linear" | "identity" => Ok(ActivationKind::Linear),
            _ => Err(DipError::UnsupportedActivation(s.to_string())),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// An activation together with its derivative bound and Gaussian moments.
///
/// Cheap to copy; the constants are computed once per kind and cached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub name: ActivationKind,
    /// Common bound on `|φ'|` and `|φ''|`.
    #[serde(rename = "B")]
    pub bound: f64,
    #[serde(rename = "C_phi")]
    pub c_phi: f64,
    #[serde(rename = "C_phi_prime")]
    pub c_phi_prime: f64,
}

/// Which function a Gaussian moment is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentOrder {
    Value,
    Derivative,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        static CACHE: OnceLock<[ActivationSpec; 4]> = OnceLock::new();
        CACHE.get_or_init(|| {
            ActivationKind::ALL.map(|kind| {
                let value = |x| evaluate(kind, x);
                let deriv = |x| evaluate_derivative(kind, x);
                ActivationSpec {
                    name: kind,
                    bound: derivative_bound(kind),
                    c_phi: gaussian_rms(value)
                        .expect("Gaussian moment of a supported activation converges"),
                    c_phi_prime: gaussian_rms(deriv)
                        .expect("Gaussian moment of a supported activation converges"),
                }
            })
        })[kind.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        evaluate(self.name, x)
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        evaluate_derivative(self.name, x)
    }

    #[inline]
    pub fn second_derivative(&self, x: f64) -> f64 {
        match self.name {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            ActivationKind::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Linear => 0.0,
        }
    }

    /// `sqrt(E[f(g)²])` where `f` is the activation or its derivative.
    pub fn gaussian_moment(&self, order: MomentOrder) -> Result<f64> {
        let kind = self.name;
        match order {
            MomentOrder::Value => gaussian_rms(|x| evaluate(kind, x)),
            MomentOrder::Derivative => gaussian_rms(|x| evaluate_derivative(kind, x)),
        }
    }
}

#[inline]
fn evaluate(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Sigmoid => sigmoid(x),
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        ActivationKind::Linear => x,
    }
}

#[inline]
fn evaluate_derivative(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Sigmoid => {
            let s = sigmoid(x);
            s * (1.0 - s)
        }
        ActivationKind::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        ActivationKind::Softplus => sigmoid(x),
        ActivationKind::Linear => 1.0,
    }
}

/// `max(sup|φ'|, sup|φ''|)`, known in closed form for every supported kind.
///
/// sigmoid: `sup φ' = 1/4` at 0, `sup |φ''| = 1/(6√3)`.
/// tanh: `sup φ' = 1` at 0, `sup |φ''| = 4/(3√3)`.
/// softplus: `φ' = sigmoid < 1`, `φ'' = sigmoid' ≤ 1/4`.
/// linear: `φ' = 1`, `φ'' = 0`.
pub fn derivative_bound(kind: ActivationKind) -> f64 {
    match kind {
        ActivationKind::Sigmoid => 0.25,
        ActivationKind::Tanh | ActivationKind::Softplus | ActivationKind::Linear => 1.0,
    }
}

/// Gauss–Hermite rule for the weight `exp(-x²)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

const RESCALE: f64 = 1e100;

/// Orthonormal Hermite polynomial of degree `n` and its derivative at `z`,
/// both divided by `RESCALE^rescales`.
fn hermite_eval(z: f64, n: usize) -> (f64, f64, usize) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    let mut rescales = 0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        if p1.abs() > RESCALE {
            p1 /= RESCALE;
            p2 /= RESCALE;
            rescales += 1;
        }
    }
    (p1, (2.0 * n as f64).sqrt() * p2, rescales)
}

impl GaussHermite {
    /// Nodes seeded by the eigenvalues of the Jacobi matrix and polished by
    /// Newton iteration on the orthonormal Hermite recurrence; weights from
    /// the derivative at each node.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut seeds: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        seeds.sort_by(|a, b| b.total_cmp(a));
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = seeds[i];
            for _ in 0..20 {
                let (p, dp, _) = hermite_eval(z, n);
                let step = p / dp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, dp, rescales) = hermite_eval(z, n);
            // True weight is 2 / (dp · RESCALE^rescales)²; it underflows to
            // zero for the outermost nodes of large rules.
            let weight = (0..rescales).fold(2.0 / (dp * dp), |acc, _| acc / (RESCALE * RESCALE));
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = weight;
            w[n - 1 - i] = weight;
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        GaussHermite {
            nodes: x,
            weights: w,
        }
    }

    /// Cached rule for `n` nodes (only the default and doubled sizes are cached).
    pub fn cached(n: usize) -> std::borrow::Cow<'static, GaussHermite> {
        static DEFAULT: OnceLock<GaussHermite> = OnceLock::new();
        static DOUBLED: OnceLock<GaussHermite> = OnceLock::new();
        if n == DEFAULT_NODES {
            std::borrow::Cow::Borrowed(DEFAULT.get_or_init(|| GaussHermite::new(DEFAULT_NODES)))
        } else if n == 2 * DEFAULT_NODES {
            std::borrow::Cow::Borrowed(DOUBLED.get_or_init(|| GaussHermite::new(2 * DEFAULT_NODES)))
        } else {
            std::borrow::Cow::Owned(GaussHermite::new(n))
        }
    }

    /// `E[f(g)]` for `g ~ N(0,1)`.
    pub fn standard_normal_expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let scale = std::f64::consts::SQRT_2;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(scale * x);
            if !v.is_finite() {
                return Err(DipError::NonFiniteEvaluation { at: scale * x });
            }
            acc += w * v;
        }
        Ok(acc / std::f64::consts::PI.sqrt())
    }
}

/// `sqrt(E[f(g)²])` for `g ~ N(0,1)`, checked against a rule with twice the nodes.
pub fn gaussian_rms<F: Fn(f64) -> f64>(f: F) -> Result<f64> {
    gaussian_rms_with(f, DEFAULT_NODES)
}

pub fn gaussian_rms_with<F: Fn(f64) -> f64>(f: F, nodes: usize) -> Result<f64> {
    let sq = |x: f64| {
        let v = f(x);
        v * v
    };
    let coarse = GaussHermite::cached(nodes).standard_normal_expectation(sq)?;
    let fine = GaussHermite::cached(2 * nodes).standard_normal_expectation(sq)?;
    let delta = (coarse.sqrt() - fine.sqrt()).abs();
    if delta >= QUADRATURE_TOL {
        return Err(DipError::QuadratureNotConverged {
            nodes,
            doubled: 2 * nodes,
            delta,
        });
    }
    Ok(fine.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    // Independent adaptive-quadrature references (double-exponential tails
    // truncated at |x| = 40, absolute tolerance 1e-16).
    const REF_SIGMOID: (f64, f64) = (0.5416447506051295, 0.21174569972066581);
    const REF_TANH: (f64, f64) = (0.6279287303491068, 0.6814711310453792);
    const REF_SOFTPLUS: (f64, f64) = (0.9598155598130821, 0.5416447506051295);

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = GaussHermite::new(DEFAULT_NODES);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        // E[g^2] = 1, E[g^4] = 3, E[g^6] = 15
        for (p, m) in [(2, 1.0), (4, 3.0), (6, 15.0)] {
            let e = rule
                .standard_normal_expectation(|x: f64| x.powi(p))
                .unwrap();
            assert!((e - m).abs() < 1e-11, "E[g^{p}] = {e}");
        }
    }

    #[test]
    fn trivial_moments() {
        assert!((gaussian_rms(|x| x).unwrap() - 1.0).abs() < 1e-12);
        assert!((gaussian_rms(|_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        let lin = ActivationSpec::new(ActivationKind::Linear);
        assert_eq!(lin.bound, 1.0);
        assert!((lin.c_phi - 1.0).abs() < 1e-12);
        assert!((lin.c_phi_prime - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_match_reference_quadrature() {
        for (kind, (c, cp)) in [
            (ActivationKind::Sigmoid, REF_SIGMOID),
            (ActivationKind::Tanh, REF_TANH),
            (ActivationKind::Softplus, REF_SOFTPLUS),
        ] {
            let spec = ActivationSpec::new(kind);
            assert!(
                (spec.c_phi - c).abs() < 1e-12,
                "{kind}: {} vs {c}",
                spec.c_phi
            );
            assert!(
                (spec.c_phi_prime - cp).abs() < 1e-12,
                "{kind}: {} vs {cp}",
                spec.c_phi_prime
            );
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo_within_three_sigma() {
        let mut rng = crate::rng::seeded_rng(20_240_611);
        let samples = 10_000_000usize;
        for kind in ActivationKind::ALL {
            let spec = ActivationSpec::new(kind);
            let (mut s1, mut s2, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..samples {
                let g: f64 = rng.sample(StandardNormal);
                let v = spec.value(g).powi(2);
                let d = spec.derivative(g).powi(2);
                s1 += v;
                s2 += v * v;
                t1 += d;
                t2 += d * d;
            }
            let nf = samples as f64;
            for (c, m1, m2) in [(spec.c_phi, s1, s2), (spec.c_phi_prime, t1, t2)] {
                let mean = m1 / nf;
                let var = (m2 / nf - mean * mean).max(0.0);
                let se = (var / nf).sqrt();
                // compare second moments: c^2 vs sample mean
                assert!(
                    (c * c - mean).abs() <= 3.0 * se + 1e-15,
                    "{kind}: quadrature {} vs MC {} (se {se:e})",
                    c * c,
                    mean
                );
            }
        }
    }

    #[test]
    fn doubling_nodes_is_converged() {
        for kind in ActivationKind::ALL {
            let spec = ActivationSpec::new(kind);
            for order in [MomentOrder::Value, MomentOrder::Derivative] {
                let a = spec.gaussian_moment(order).unwrap();
                let sq = |x: f64| match order {
                    MomentOrder::Value => spec.value(x).powi(2),
                    MomentOrder::Derivative => spec.derivative(x).powi(2),
                };
                let b = GaussHermite::new(300)
                    .standard_normal_expectation(sq)
                    .unwrap()
                    .sqrt();
                assert!((a - b).abs() < QUADRATURE_TOL);
            }
        }
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let err = gaussian_rms(|x| if x > 5.0 { f64::NAN } else { x }).unwrap_err();
        assert!(matches!(err, DipError::NonFiniteEvaluation { .. }));
    }

    #[test]
    fn derivative_bounds() {
        assert_eq!(derivative_bound(ActivationKind::Sigmoid), 0.25);
        assert_eq!(derivative_bound(ActivationKind::Linear), 1.0);
        assert_eq!(derivative_bound(ActivationKind::Tanh), 1.0);
        assert!(matches!(
            "relu".parse::<ActivationKind>(),
            Err(DipError::UnsupportedActivation(_))
        ));
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        for kind in ActivationKind::ALL {
            let spec = ActivationSpec::new(kind);
            for i in 0..=200 {
                let x = -5.0 + 0.05 * i as f64;
                let fd1 = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h);
                let fd2 = (spec.derivative(x + h) - spec.derivative(x - h)) / (2.0 * h);
                let d1 = spec.derivative(x);
                let d2 = spec.second_derivative(x);
                assert!(
                    (fd1 - d1).abs() / d1.abs().max(1e-3) < 1e-6,
                    "{kind} φ' at {x}"
                );
                assert!(
                    (fd2 - d2).abs() / d2.abs().max(1e-3) < 1e-6,
                    "{kind} φ'' at {x}"
                );
            }
        }
    }

    #[test]
    fn derivative_bound_on_random_inputs() {
        let mut rng = crate::rng::seeded_rng(7);
        for kind in ActivationKind::ALL {
            let spec = ActivationSpec::new(kind);
            for _ in 0..100_000 {
                let x: f64 = rng.random_range(-50.0..50.0);
                assert!(spec.derivative(x).abs() <= spec.bound + 1e-12);
                assert!(spec.second_derivative(x).abs() <= spec.bound + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn derivatives_bounded_everywhere(x in -1e3f64..1e3, k in 0usize..4) {
            let spec = ActivationSpec::new(ActivationKind::ALL[k]);
            prop_assert!(spec.derivative(x).abs() <= spec.bound + 1e-12);
            prop_assert!(spec.second_derivative(x).abs() <= spec.bound + 1e-12);
            prop_assert!(spec.value(x).is_finite());
        }
    }

    #[test]
    fn constants_are_deterministic() {
        let a = ActivationSpec::new(ActivationKind::Softplus);
        let b = GaussHermite::new(DEFAULT_NODES);
        let c = GaussHermite::new(DEFAULT_NODES);
        assert_eq!(b.nodes, c.nodes);
        assert_eq!(b.weights, c.weights);
        assert_eq!(a, ActivationSpec::new(ActivationKind::Softplus));
    }
}
