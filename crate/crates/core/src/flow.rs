//! Explicit-Euler integration of the gradient flow on
//! `L(W) = ‖A g(u, W) − y‖² / (2m)`.
//!
//! Every row of `∇_W L` is a multiple of `uᵀ`:
//!
//! ```text
//! ∇_W L = c uᵀ,   c_i = φ'(Wⁱu) · (V_iᵀ Aᵀ r) / (m √k),   r = A g − y
//! ```
//!
//! so an Euler step `W ← W − η c uᵀ` moves the pre-activations by
//! `z ← z − η ‖u‖² c`. The integrator keeps `z = W u` and the accumulated
//! coefficients `a` (with `W(t) = W(0) − a uᵀ`) instead of the full k×d
//! matrix; one step costs O(k·n + m·n) independently of `d`. `W` is written
//! back when the run ends.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DipError, Result};
use crate::model::{sigma_min_from_gram, DipNetwork};
use crate::problem::InverseProblem;
use crate::theory::TheoryReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Euler step `η`; continuous time is `step · η`.
    pub step_size: f64,
    pub max_steps: usize,
    /// Success once `L ≤ loss_threshold`.
    pub loss_threshold: f64,
    /// Sampling stride of the trajectory (first and last steps are always kept).
    pub record_every: usize,
    /// Record `σ_min(J(W(t)))` at each sample (one n×n eigensolve per sample).
    pub track_sigma_min: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step_size: 1.0,
            max_steps: 25_000,
            loss_threshold: 1e-7,
            record_every: 100,
            track_sigma_min: false,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(DipError::invalid(
                "flow.step_size",
                "must be positive and finite",
            ));
        }
        if self.max_steps == 0 {
            return Err(DipError::invalid("flow.max_steps", "must be at least 1"));
        }
        if !(self.loss_threshold > 0.0) {
            return Err(DipError::invalid("flow.loss_threshold", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(DipError::invalid("flow.record_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    StepCap,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub time: f64,
    pub loss: f64,
    /// `‖y(t) − y‖`.
    pub residual_y: f64,
    /// `‖y(t) − ȳ‖`.
    pub residual_ybar: f64,
    /// `‖W(t) − W(0)‖_F`.
    pub param_drift: f64,
    #[serde(rename = "sigma_min_J")]
    pub sigma_min_j: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step_size: f64,
    pub samples: Vec<Sample>,
    pub outcome: Outcome,
}

pub const CSV_HEADER: &str = "step,time,loss,residual_y,residual_ybar,param_drift,sigma_min_J";

impl Trajectory {
    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory always has a sample")
    }

    pub fn final_step(&self) -> usize {
        self.last().step
    }

    /// Writes the trajectory as CSV. Each line of `preamble` is emitted first
    /// as a `# ` comment.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: Option<&str>) -> Result<()> {
        if let Some(text) = preamble {
            for line in text.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            let sig = s.sigma_min_j.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                s.step, s.time, s.loss, s.residual_y, s.residual_ybar, s.param_drift, sig
            )?;
        }
        Ok(())
    }
}

fn check_dims(net: &DipNetwork, prob: &InverseProblem) -> Result<()> {
    net.check_dimensions()?;
    if net.output_dim() != prob.n() {
        return Err(DipError::DimensionMismatch(format!(
            "network outputs {} values but A has {} columns",
            net.output_dim(),
            prob.n()
        )));
    }
    Ok(())
}

/// `‖A g(u, W) − y‖² / (2m)`.
pub fn loss(net: &DipNetwork, prob: &InverseProblem) -> Result<f64> {
    check_dims(net, prob)?;
    let r = &prob.a * net.forward() - &prob.y;
    Ok(r.norm_squared() / (2.0 * prob.m() as f64))
}

/// Per-neuron gradient coefficients `c` with `∇_W L = c uᵀ`, from the
/// pre-activations and the residual `r = A g − y`.
fn gradient_coefficients(
    net: &DipNetwork,
    prob: &InverseProblem,
    z: &DVector<f64>,
    r: &DVector<f64>,
) -> DVector<f64> {
    let s = prob.a.tr_mul(r);
    let q = net.v.tr_mul(&s);
    let scale = 1.0 / (prob.m() as f64 * (net.width() as f64).sqrt());
    z.zip_map(&q, |zi, qi| net.activation.derivative(zi) * qi * scale)
}

/// `∇_W L` as a k×d matrix, computed without forming the Jacobian.
pub fn loss_gradient(net: &DipNetwork, prob: &InverseProblem) -> Result<DMatrix<f64>> {
    check_dims(net, prob)?;
    let z = net.preactivations();
    let r = &prob.a * net.forward_from_preactivations(&z) - &prob.y;
    let c = gradient_coefficients(net, prob, &z, &r);
    Ok(c * net.u.transpose())
}

/// Runs gradient descent from the current `W` until the loss drops to the
/// threshold, the step cap is hit, or the loss stops being finite.
///
/// On return `net.w` holds the last iterate.
pub fn run_flow(
    net: &mut DipNetwork,
    prob: &InverseProblem,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(net, prob)?;
    let (k, n, m) = (net.width(), net.output_dim(), prob.m());
    let eta = cfg.step_size;
    let u_norm = net.u.norm();
    let u2 = u_norm * u_norm;
    let inv_sqrt_k = 1.0 / (k as f64).sqrt();
    let grad_scale = 1.0 / (m as f64 * (k as f64).sqrt());
    let two_m = 2.0 * m as f64;

    let mut z = net.preactivations();
    let mut acc = DVector::<f64>::zeros(k);
    let mut act = DVector::<f64>::zeros(k);
    let mut g = DVector::<f64>::zeros(n);
    let mut ag = DVector::<f64>::zeros(m);
    let mut r = DVector::<f64>::zeros(m);
    let mut s = DVector::<f64>::zeros(n);
    let mut q = DVector::<f64>::zeros(k);

    let mut samples = Vec::new();
    let outcome;
    let mut step = 0usize;
    loop {
        for (a, &zi) in act.iter_mut().zip(z.iter()) {
            *a = net.activation.value(zi);
        }
        g.gemv(inv_sqrt_k, &net.v, &act, 0.0);
        ag.gemv(1.0, &prob.a, &g, 0.0);
        r.copy_from(&ag);
        r -= &prob.y;
        let loss = r.norm_squared() / two_m;

        let terminal = if !loss.is_finite() {
            Some(Outcome::Diverged)
        } else if loss <= cfg.loss_threshold {
            Some(Outcome::Converged)
        } else if step >= cfg.max_steps {
            Some(Outcome::StepCap)
        } else {
            None
        };

        if terminal.is_some() || step.is_multiple_of(cfg.record_every) {
            let sigma_min_j = if cfg.track_sigma_min && loss.is_finite() {
                Some(sigma_min_from_gram(&net.gram_from_preactivations(&z))?)
            } else {
                None
            };
            samples.push(Sample {
                step,
                time: step as f64 * eta,
                loss,
                residual_y: r.norm(),
                residual_ybar: (&ag - &prob.y_bar).norm(),
                param_drift: acc.norm() * u_norm,
                sigma_min_j,
            });
        }
        if let Some(o) = terminal {
            outcome = o;
            break;
        }

        s.gemv_tr(1.0, &prob.a, &r, 0.0);
        q.gemv_tr(1.0, &net.v, &s, 0.0);
        for i in 0..k {
            let c = net.activation.derivative(z[i]) * q[i] * grad_scale;
            acc[i] += eta * c;
            z[i] -= eta * u2 * c;
        }
        step += 1;
    }

    // W(t) = W(0) − a uᵀ
    net.w.ger(-1.0, &acc, &net.u, 1.0);

    Ok(Trajectory {
        step_size: eta,
        samples,
        outcome,
    })
}

/// Time after which the early-stopping guarantee applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingTime {
    At(f64),
    /// No noise (or a zero decay rate): there is no finite stopping time and
    /// the caller should run to the loss threshold instead.
    Unbounded,
}

impl StoppingTime {
    pub fn time(self) -> Option<f64> {
        match self {
            StoppingTime::At(t) => Some(t),
            StoppingTime::Unbounded => None,
        }
    }
}

/// `t* = 4m log(‖y − A g(u,W(0))‖ / ‖ε‖) / (σ_A² σ_min(J(W(0)))²)`,
/// i.e. `log(init_residual / noise_norm) / rate`; zero when the initial
/// residual is already below the noise level.
pub fn early_stopping_time(
    report: &TheoryReport,
    init_residual: f64,
    noise_norm: f64,
) -> StoppingTime {
    if !(noise_norm > 0.0) {
        return StoppingTime::Unbounded;
    }
    if init_residual <= noise_norm {
        return StoppingTime::At(0.0);
    }
    if !(report.rate > 0.0) {
        return StoppingTime::Unbounded;
    }
    StoppingTime::At((init_residual / noise_norm).ln() / report.rate)
}
