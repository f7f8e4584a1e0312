//! Multi-trial experiments: phase-transition grids, decay-rate fits and the
//! early-stopping study.
//!
//! Seeding: trial `t` of cell `c` (row-major over the two axes) uses
//! `trial_seed(master_seed, c, t)`; its problem and network are drawn from the
//! two streams of [`trial_streams`]. Results therefore do not depend on how
//! cells and trials are scheduled across threads.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::{DipError, Result};
use crate::flow::{early_stopping_time, run_flow, FlowConfig, Outcome, StoppingTime, Trajectory};
use crate::model::{init_network_with, DipNetwork, VDistribution};
use crate::problem::{make_problem, InverseProblem, Operator, OperatorKind};
use crate::rng::{derive_seed, trial_seed, trial_streams};
use crate::theory::{build_report, BoundaryPoint, TheoryReport};

/// Default work budget for a grid, in estimated floating-point operations.
pub const DEFAULT_MAX_WORK: f64 = 5e13;

/// Parameters of a single (problem, network, flow) trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub activation: ActivationKind,
    #[serde(default)]
    pub operator: OperatorKind,
    #[serde(default)]
    pub v_distribution: VDistribution,
    #[serde(default)]
    pub noise_level: f64,
}

impl TrialParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("d", self.d), ("n", self.n), ("m", self.m)] {
            if v == 0 {
                return Err(DipError::ZeroDimension(name));
            }
        }
        if self.operator == OperatorKind::Custom {
            return Err(DipError::invalid(
                "operator",
                "custom operators are not supported in generated trials",
            ));
        }
        if !(self.noise_level >= 0.0) {
            return Err(DipError::invalid("noise_level", "must be nonnegative"));
        }
        Ok(())
    }

    fn operator(&self) -> Operator {
        match self.operator {
            OperatorKind::Identity => Operator::Identity,
            _ => Operator::Gaussian,
        }
    }

    /// Problem and freshly initialized network of the trial with this seed.
    pub fn instantiate(&self, trial_seed: u64) -> Result<(InverseProblem, DipNetwork)> {
        let (ps, ns) = trial_streams(trial_seed);
        let prob = make_problem(self.m, self.n, self.noise_level, ps, &self.operator())?;
        let net = init_network_with(
            self.k,
            self.d,
            self.n,
            ActivationSpec::new(self.activation),
            self.v_distribution,
            ns,
        )?;
        Ok((prob, net))
    }

    /// Estimated operation count of one trial under `flow`.
    pub fn estimated_work(&self, flow: &FlowConfig) -> f64 {
        let (k, d, n, m) = (self.k as f64, self.d as f64, self.n as f64, self.m as f64);
        let per_step = 4.0 * k * n + 4.0 * m * n + 10.0 * k;
        flow.max_steps as f64 * per_step + k * d + m * n * m.min(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisParam {
    K,
    N,
    M,
    D,
}

impl AxisParam {
    pub fn name(self) -> &'static str {
        match self {
            AxisParam::K => "k",
            AxisParam::N => "n",
            AxisParam::M => "m",
            AxisParam::D => "d",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub param: AxisParam,
    pub values: Vec<usize>,
}

/// Parameters held constant across a grid. Exactly the two axis parameters
/// must be left unset among `k`, `d`, `n`, `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub activation: ActivationKind,
    #[serde(default)]
    pub operator: OperatorKind,
    #[serde(default)]
    pub v_distribution: VDistribution,
    #[serde(default)]
    pub noise_level: f64,
}

impl FixedParams {
    fn get(&self, p: AxisParam) -> Option<usize> {
        match p {
            AxisParam::K => self.k,
            AxisParam::D => self.d,
            AxisParam::N => self.n,
            AxisParam::M => self.m,
        }
    }
}

fn default_max_work() -> f64 {
    DEFAULT_MAX_WORK
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axis1: Axis,
    pub axis2: Axis,
    pub fixed: FixedParams,
    pub trials_per_cell: usize,
    pub flow: FlowConfig,
    pub master_seed: u64,
    /// Refuse to start when the estimated work exceeds this many operations.
    #[serde(default = "default_max_work")]
    pub max_work: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.axis1.param == self.axis2.param {
            return Err(DipError::invalid(
                "axis2.param",
                "axes must name different parameters",
            ));
        }
        for (label, axis) in [("axis1", &self.axis1), ("axis2", &self.axis2)] {
            if axis.values.is_empty() {
                return Err(DipError::invalid(
                    format!("{label}.values"),
                    "must not be empty",
                ));
            }
            if axis.values.contains(&0) {
                return Err(DipError::invalid(
                    format!("{label}.values"),
                    "all values must be positive",
                ));
            }
            if self.fixed.get(axis.param).is_some() {
                return Err(DipError::invalid(
                    format!("fixed.{}", axis.param.name()),
                    format!("is also the {label} parameter"),
                ));
            }
        }
        for p in [AxisParam::K, AxisParam::D, AxisParam::N, AxisParam::M] {
            if p != self.axis1.param && p != self.axis2.param {
                match self.fixed.get(p) {
                    None => {
                        return Err(DipError::invalid(
                            format!("fixed.{}", p.name()),
                            "must be set when it is not a grid axis",
                        ))
                    }
                    Some(0) => return Err(DipError::ZeroDimension(p.name())),
                    Some(_) => {}
                }
            }
        }
        if self.trials_per_cell == 0 {
            return Err(DipError::invalid("trials_per_cell", "must be at least 1"));
        }
        self.flow.validate()?;
        self.cell_params(0, 0).validate()
    }

    pub fn num_cells(&self) -> usize {
        self.axis1.values.len() * self.axis2.values.len()
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i * self.axis2.values.len() + j
    }

    /// Parameters of cell `(i, j)` (row `i` of axis 1, column `j` of axis 2).
    pub fn cell_params(&self, i: usize, j: usize) -> TrialParams {
        let f = &self.fixed;
        let mut p = TrialParams {
            k: f.k.unwrap_or(0),
            d: f.d.unwrap_or(0),
            n: f.n.unwrap_or(0),
            m: f.m.unwrap_or(0),
            activation: f.activation,
            operator: f.operator,
            v_distribution: f.v_distribution,
            noise_level: f.noise_level,
        };
        for (axis, idx) in [(&self.axis1, i), (&self.axis2, j)] {
            let v = axis.values[idx];
            match axis.param {
                AxisParam::K => p.k = v,
                AxisParam::D => p.d = v,
                AxisParam::N => p.n = v,
                AxisParam::M => p.m = v,
            }
        }
        p
    }

    pub fn estimated_work(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.axis1.values.len() {
            for j in 0..self.axis2.values.len() {
                total +=
                    self.trials_per_cell as f64 * self.cell_params(i, j).estimated_work(&self.flow);
            }
        }
        total
    }

    pub fn cell_seeds(&self, cell: usize) -> Vec<u64> {
        (0..self.trials_per_cell)
            .map(|t| trial_seed(self.master_seed, cell as u64, t as u64))
            .collect()
    }
}

/// Outcome of one trial inside a grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub final_loss: f64,
    pub kappa_a: f64,
}

pub fn run_trial(params: &TrialParams, flow: &FlowConfig, seed: u64) -> Result<TrialRecord> {
    let (prob, mut net) = params.instantiate(seed)?;
    // Grids only need the endpoint.
    let cfg = FlowConfig {
        record_every: flow.max_steps.max(1),
        track_sigma_min: false,
        ..flow.clone()
    };
    let traj = run_flow(&mut net, &prob, &cfg)?;
    Ok(TrialRecord {
        seed,
        outcome: traj.outcome,
        steps: traj.final_step(),
        final_loss: traj.last().loss,
        kappa_a: prob.kappa_a(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub axis1_index: usize,
    pub axis2_index: usize,
    pub axis1_value: usize,
    pub axis2_value: usize,
    pub success_count: usize,
    pub trials: usize,
    /// Mean step count over converged trials.
    pub mean_steps_to_converge: Option<f64>,
    /// Mean final loss over trials that ended with a finite loss.
    pub mean_final_loss: Option<f64>,
    pub mean_kappa_a: f64,
    pub seeds: Vec<u64>,
}

impl CellResult {
    pub fn success_freq(&self) -> f64 {
        self.success_count as f64 / self.trials as f64
    }

    fn aggregate(spec: &GridSpec, i: usize, j: usize, records: &[TrialRecord]) -> Self {
        let converged: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.outcome == Outcome::Converged)
            .collect();
        let finite: Vec<f64> = records
            .iter()
            .map(|r| r.final_loss)
            .filter(|l| l.is_finite())
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let steps: Vec<f64> = converged.iter().map(|r| r.steps as f64).collect();
        CellResult {
            axis1_index: i,
            axis2_index: j,
            axis1_value: spec.axis1.values[i],
            axis2_value: spec.axis2.values[j],
            success_count: converged.len(),
            trials: records.len(),
            mean_steps_to_converge: mean(&steps),
            mean_final_loss: mean(&finite),
            mean_kappa_a: records.iter().map(|r| r.kappa_a).sum::<f64>() / records.len() as f64,
            seeds: records.iter().map(|r| r.seed).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub spec: GridSpec,
    /// Completed cells in row-major order.
    pub cells: Vec<CellResult>,
    pub complete: bool,
}

impl GridResult {
    pub fn cell(&self, i: usize, j: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.axis1_index == i && c.axis2_index == j)
    }

    /// Cell by axis values.
    pub fn cell_at(&self, axis1_value: usize, axis2_value: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.axis1_value == axis1_value && c.axis2_value == axis2_value)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, preamble: Option<&str>) -> Result<()> {
        if let Some(text) = preamble {
            for line in text.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(
            out,
            "# axis1 = {}, axis2 = {}",
            self.spec.axis1.param.name(),
            self.spec.axis2.param.name()
        )?;
        writeln!(out, "axis1,axis2,success_freq,trials,mean_steps")?;
        for c in &self.cells {
            let steps = c
                .mean_steps_to_converge
                .map(|s| format!("{s}"))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                c.axis1_value,
                c.axis2_value,
                c.success_freq(),
                c.trials,
                steps
            )?;
        }
        Ok(())
    }

    /// Smallest axis-1 width reaching `min_success` in each column. Requires
    /// axis 1 to be `k`; columns that never reach the target are skipped.
    pub fn phase_boundaries(&self, min_success: f64) -> Vec<BoundaryPoint> {
        if self.spec.axis1.param != AxisParam::K {
            return Vec::new();
        }
        let mut out = Vec::new();
        for j in 0..self.spec.axis2.values.len() {
            let mut best: Option<&CellResult> = None;
            for i in 0..self.spec.axis1.values.len() {
                if let Some(c) = self.cell(i, j) {
                    if c.success_freq() >= min_success
                        && best.is_none_or(|b| c.axis1_value < b.axis1_value)
                    {
                        best = Some(c);
                    }
                }
            }
            if let Some(c) = best {
                let p = self.spec.cell_params(c.axis1_index, c.axis2_index);
                out.push(BoundaryPoint {
                    n: p.n,
                    m: p.m,
                    d: p.d,
                    kappa_a: c.mean_kappa_a,
                    k: p.k,
                });
            }
        }
        out
    }
}

/// Knobs for [`run_grid_with`].
#[derive(Default)]
pub struct RunOptions {
    /// Receives every completed cell.
    pub progress: Option<Sender<CellResult>>,
    /// When set, cells not yet started are skipped and the result is partial.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Earlier (partial) result for the same spec; its cells are reused.
    pub previous: Option<GridResult>,
}

pub fn run_grid(spec: &GridSpec) -> Result<GridResult> {
    run_grid_with(spec, RunOptions::default())
}

pub fn run_grid_with(spec: &GridSpec, opts: RunOptions) -> Result<GridResult> {
    spec.validate()?;
    let mut done: Vec<CellResult> = match opts.previous {
        Some(prev) => {
            if &prev.spec != spec {
                return Err(DipError::invalid(
                    "resume",
                    "the partial result was produced by a different grid spec",
                ));
            }
            prev.cells
        }
        None => Vec::new(),
    };
    let missing: Vec<(usize, usize)> = (0..spec.axis1.values.len())
        .flat_map(|i| (0..spec.axis2.values.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            !done
                .iter()
                .any(|c| c.axis1_index == i && c.axis2_index == j)
        })
        .collect();

    let estimate: f64 = missing
        .iter()
        .map(|&(i, j)| {
            spec.trials_per_cell as f64 * spec.cell_params(i, j).estimated_work(&spec.flow)
        })
        .sum();
    if estimate > spec.max_work {
        return Err(DipError::BudgetExceeded {
            estimate,
            budget: spec.max_work,
        });
    }

    let cancelled = || {
        opts.cancel
            .as_ref()
            .is_some_and(|c| c.load(Ordering::Relaxed))
    };
    let progress = opts.progress.as_ref();
    let fresh = missing
        .par_iter()
        .map(|&(i, j)| -> Result<Option<CellResult>> {
            if cancelled() {
                return Ok(None);
            }
            let params = spec.cell_params(i, j);
            let seeds = spec.cell_seeds(spec.cell_index(i, j));
            let records = seeds
                .par_iter()
                .map(|&s| run_trial(&params, &spec.flow, s))
                .collect::<Result<Vec<_>>>()?;
            let cell = CellResult::aggregate(spec, i, j, &records);
            if let Some(tx) = progress {
                let _ = tx.send(cell.clone());
            }
            Ok(Some(cell))
        })
        .collect::<Result<Vec<_>>>()?;
    done.extend(fresh.into_iter().flatten());
    done.sort_by_key(|c| (c.axis1_index, c.axis2_index));
    let complete = done.len() == spec.num_cells();
    Ok(GridResult {
        spec: spec.clone(),
        cells: done,
        complete,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate_hat: f64,
    pub r_squared: f64,
    pub samples_used: usize,
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares slope of `log ‖y(t) − y‖` against `t`, using the samples
/// recorded before the residual first reaches the numerical floor
/// `10 ε_mach · max(1, ‖y(0) − y‖)`.
pub fn fit_decay_rate(traj: &Trajectory) -> Result<DecayFit> {
    let r0 = traj.samples.first().map(|s| s.residual_y).unwrap_or(0.0);
    let floor = 10.0 * f64::EPSILON * r0.max(1.0);
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .take_while(|s| s.residual_y.is_finite() && s.residual_y > floor)
        .map(|s| (s.time, s.residual_y.ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(DipError::InsufficientData {
            valid: pts.len(),
            required: MIN_FIT_SAMPLES,
        });
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(DipError::InsufficientData {
            valid: 1,
            required: MIN_FIT_SAMPLES,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(DecayFit {
        rate_hat: -slope,
        r_squared,
        samples_used: pts.len(),
    })
}

/// Worst ratio of the recorded residual to the exponential envelope
/// `r₀ e^{−rate·t}`; the envelope holds with slack `s` iff the ratio is `≤ 1 + s`.
pub fn envelope_ratio(traj: &Trajectory, report: &TheoryReport) -> f64 {
    let r0 = traj.first().residual_y;
    traj.samples
        .iter()
        .map(|s| s.residual_y / (r0 * (-report.rate * s.time).exp()))
        .fold(0.0, f64::max)
}

/// Trajectory facts: the smallest recorded
/// `σ_min(J(t)) / σ_min(J₀)` and the largest `‖W(t) − W(0)‖_F / R'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBounds {
    pub min_sigma_ratio: Option<f64>,
    pub max_drift_ratio: f64,
}

pub fn trajectory_bounds(traj: &Trajectory, report: &TheoryReport) -> TrajectoryBounds {
    let min_sigma_ratio = traj
        .samples
        .iter()
        .filter_map(|s| s.sigma_min_j)
        .map(|s| s / report.sigma_min_j0)
        .reduce(f64::min);
    TrajectoryBounds {
        min_sigma_ratio,
        max_drift_ratio: traj
            .samples
            .iter()
            .map(|s| s.param_drift / report.r_prime)
            .fold(0.0, f64::max),
    }
}

/// Draws trials until `wanted` of them satisfy the overparametrization
/// condition at initialization; returns their trial seeds.
pub fn condition_satisfying_seeds(
    params: &TrialParams,
    wanted: usize,
    max_draws: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    params.validate()?;
    let mut found = Vec::with_capacity(wanted);
    const BATCH: usize = 64;
    let mut next = 0usize;
    while found.len() < wanted && next < max_draws {
        let end = (next + BATCH).min(max_draws);
        let hits = (next..end)
            .into_par_iter()
            .map(|t| {
                let s = derive_seed(seed, t as u64);
                let (prob, net) = params.instantiate(s)?;
                Ok(build_report(&net, &prob)?.condition_eq5.then_some(s))
            })
            .collect::<Result<Vec<Option<u64>>>>()?;
        found.extend(hits.into_iter().flatten());
        next = end;
    }
    found.truncate(wanted);
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingRecord {
    pub seed: u64,
    pub condition_eq5: bool,
    pub noise_norm: f64,
    pub t_star: Option<f64>,
    /// `‖y(t*) − ȳ‖`, only for trials meeting the condition.
    pub residual_ybar: Option<f64>,
    pub success: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingSummary {
    pub trials: usize,
    /// Trials whose initialization violated the condition (excluded).
    pub excluded: usize,
    pub successes: usize,
    /// Fraction of condition-satisfying trials with `‖y(t*) − ȳ‖ ≤ 2‖ε‖`.
    pub fraction: Option<f64>,
    pub records: Vec<EarlyStoppingRecord>,
}

/// Runs the flow of one trial up to the early-stopping time and checks
/// `‖y(t*) − ȳ‖ ≤ 2‖ε‖`.
pub fn early_stopping_trial(
    params: &TrialParams,
    step_size: f64,
    seed: u64,
) -> Result<EarlyStoppingRecord> {
    let (prob, mut net) = params.instantiate(seed)?;
    let report = build_report(&net, &prob)?;
    let noise_norm = prob.noise_norm();
    let mut rec = EarlyStoppingRecord {
        seed,
        condition_eq5: report.condition_eq5,
        noise_norm,
        t_star: None,
        residual_ybar: None,
        success: None,
    };
    if !report.condition_eq5 {
        return Ok(rec);
    }
    let t_star = match early_stopping_time(&report, report.init_residual, noise_norm) {
        StoppingTime::At(t) => t,
        StoppingTime::Unbounded => {
            return Err(DipError::invalid(
                "noise_level",
                "early stopping needs nonzero noise",
            ))
        }
    };
    let steps = (t_star / step_size).ceil() as usize;
    let residual = if steps == 0 {
        (&prob.a * net.forward() - &prob.y_bar).norm()
    } else {
        let cfg = FlowConfig {
            step_size,
            max_steps: steps,
            loss_threshold: f64::MIN_POSITIVE,
            record_every: steps,
            track_sigma_min: false,
        };
        let traj = run_flow(&mut net, &prob, &cfg)?;
        traj.last().residual_ybar
    };
    rec.t_star = Some(t_star);
    rec.residual_ybar = Some(residual);
    rec.success = Some(residual <= 2.0 * noise_norm);
    Ok(rec)
}

/// Early-stopping study over `seeds` (e.g. from [`condition_satisfying_seeds`]).
pub fn early_stopping_experiment(
    params: &TrialParams,
    step_size: f64,
    seeds: &[u64],
) -> Result<EarlyStoppingSummary> {
    params.validate()?;
    if !(params.noise_level > 0.0) {
        return Err(DipError::invalid("noise_level", "must be positive"));
    }
    let records = seeds
        .par_iter()
        .map(|&s| early_stopping_trial(params, step_size, s))
        .collect::<Result<Vec<_>>>()?;
    let eligible: Vec<&EarlyStoppingRecord> = records.iter().filter(|r| r.condition_eq5).collect();
    let successes = eligible.iter().filter(|r| r.success == Some(true)).count();
    Ok(EarlyStoppingSummary {
        trials: records.len(),
        excluded: records.len() - eligible.len(),
        successes,
        fraction: (!eligible.is_empty()).then(|| successes as f64 / eligible.len() as f64),
        records,
    })
}

/// Seeds `0..trials` derived from `seed`, for experiments without screening.
pub fn plain_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials).map(|t| derive_seed(seed, t as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Sample;

    fn tiny_spec() -> GridSpec {
        GridSpec {
            axis1: Axis {
                param: AxisParam::K,
                values: vec![5, 40],
            },
            axis2: Axis {
                param: AxisParam::N,
                values: vec![2, 3],
            },
            fixed: FixedParams {
                k: None,
                d: Some(4),
                n: None,
                m: Some(2),
                activation: ActivationKind::Sigmoid,
                operator: OperatorKind::Gaussian,
                v_distribution: VDistribution::Rademacher,
                noise_level: 0.0,
            },
            trials_per_cell: 3,
            flow: FlowConfig {
                max_steps: 300,
                loss_threshold: 1e-6,
                ..FlowConfig::default()
            },
            master_seed: 17,
            max_work: DEFAULT_MAX_WORK,
        }
    }

    fn synthetic(residuals: impl Fn(f64) -> f64, times: &[f64]) -> Trajectory {
        Trajectory {
            step_size: 1.0,
            outcome: Outcome::Converged,
            samples: times
                .iter()
                .enumerate()
                .map(|(i, &t)| Sample {
                    step: i,
                    time: t,
                    loss: 0.0,
                    residual_y: residuals(t),
                    residual_ybar: 0.0,
                    param_drift: 0.0,
                    sigma_min_j: None,
                })
                .collect(),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(tiny_spec().validate().is_ok());
        let mut s = tiny_spec();
        s.fixed.k = Some(3);
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.fixed.d = None;
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.axis2.param = AxisParam::K;
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.axis1.values.push(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn trivial_cell_succeeds() {
        let mut s = tiny_spec();
        s.axis1.values = vec![3];
        s.axis2.values = vec![2];
        s.flow.loss_threshold = 1e12;
        let res = run_grid(&s).unwrap();
        assert!(res.complete);
        assert_eq!(res.cells.len(), 1);
        assert_eq!(res.cells[0].success_freq(), 1.0);
        assert_eq!(res.cells[0].mean_steps_to_converge, Some(0.0));
    }

    #[test]
    fn budget_refusal() {
        let mut s = tiny_spec();
        s.max_work = 10.0;
        match run_grid(&s) {
            Err(DipError::BudgetExceeded { estimate, budget }) => {
                assert!(estimate > budget);
                assert!((estimate - s.estimated_work()).abs() < 1e-6 * estimate);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_is_deterministic_and_resumable() {
        let s = tiny_spec();
        let full = run_grid(&s).unwrap();
        let again = run_grid(&s).unwrap();
        assert_eq!(
            serde_json::to_string(&full).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        for c in &full.cells {
            assert!(c.success_count <= c.trials);
            assert_eq!(
                c.seeds,
                s.cell_seeds(s.cell_index(c.axis1_index, c.axis2_index))
            );
        }
        // A partial result with two cells, resumed, matches the full run.
        let partial = GridResult {
            spec: s.clone(),
            cells: vec![full.cells[0].clone(), full.cells[3].clone()],
            complete: false,
        };
        let (tx, rx) = std::sync::mpsc::channel();
        let resumed = run_grid_with(
            &s,
            RunOptions {
                progress: Some(tx),
                previous: Some(partial),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(rx.try_iter().count(), 2);
        assert_eq!(resumed, full);

        let mut other = s.clone();
        other.master_seed += 1;
        let res = run_grid_with(
            &other,
            RunOptions {
                previous: Some(full.clone()),
                ..RunOptions::default()
            },
        );
        assert!(res.is_err());
    }

    #[test]
    fn cancellation_yields_partial_result() {
        let s = tiny_spec();
        let cancel = Arc::new(AtomicBool::new(true));
        let res = run_grid_with(
            &s,
            RunOptions {
                cancel: Some(cancel),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(!res.complete);
        assert!(res.cells.is_empty());
    }

    #[test]
    fn csv_layout() {
        let res = run_grid(&tiny_spec()).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "axis1,axis2,success_freq,trials,mean_steps");
        assert_eq!(lines.len(), 2 + 4);
        assert!(lines[2].starts_with("5,2,"));
    }

    #[test]
    fn exponential_fit_is_exact() {
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let fit = fit_decay_rate(&synthetic(|t| (-2.0 * t).exp(), &times)).unwrap();
        assert!((fit.rate_hat - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.samples_used, 20);
    }

    #[test]
    fn fit_stops_at_numerical_floor() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let traj = synthetic(|t| if t < 15.0 { (-t).exp() } else { 1e-17 }, &times);
        let fit = fit_decay_rate(&traj).unwrap();
        assert_eq!(fit.samples_used, 15);
        assert!((fit.rate_hat - 1.0).abs() < 1e-12);
        let short = synthetic(|t| (-t).exp(), &times[..5]);
        assert!(matches!(
            fit_decay_rate(&short),
            Err(DipError::InsufficientData { valid: 5, .. })
        ));
    }

    #[test]
    fn linear_single_observation_rate_matches_eigenvalue() {
        // With m = 1 and φ linear the residual is a scalar obeying
        // r ← (1 − η λ / m) r with λ = A H Aᵀ, so the fitted continuous rate is
        // −log(1 − η λ) / η exactly.
        let params = TrialParams {
            k: 30,
            d: 4,
            n: 3,
            m: 1,
            activation: ActivationKind::Linear,
            operator: OperatorKind::Gaussian,
            v_distribution: VDistribution::Rademacher,
            noise_level: 0.0,
        };
        let (prob, mut net) = params.instantiate(5).unwrap();
        let h = net.jacobian_gram();
        let lambda = (&prob.a * h * prob.a.transpose())[(0, 0)];
        let eta = 0.05;
        let cfg = FlowConfig {
            step_size: eta,
            max_steps: 100,
            loss_threshold: 1e-300,
            record_every: 2,
            track_sigma_min: false,
        };
        let traj = run_flow(&mut net, &prob, &cfg).unwrap();
        let fit = fit_decay_rate(&traj).unwrap();
        let expected = -(1.0 - eta * lambda).ln() / eta;
        assert!(
            (fit.rate_hat - expected).abs() < 0.01 * expected,
            "{} vs {expected}",
            fit.rate_hat
        );
    }

    #[test]
    fn early_stopping_records_are_consistent() {
        let params = TrialParams {
            k: 2000,
            d: 5,
            n: 4,
            m: 4,
            activation: ActivationKind::Linear,
            operator: OperatorKind::Identity,
            v_distribution: VDistribution::Rademacher,
            noise_level: 0.1,
        };
        let seeds = plain_seeds(1, 6);
        let summary = early_stopping_experiment(&params, 0.1, &seeds).unwrap();
        assert_eq!(summary.trials, 6);
        assert!(summary.excluded < 6);
        for r in &summary.records {
            if r.condition_eq5 {
                assert!(r.t_star.unwrap() >= 0.0);
                assert_eq!(
                    r.success,
                    Some(r.residual_ybar.unwrap() <= 2.0 * r.noise_norm)
                );
            } else {
                assert!(r.t_star.is_none() && r.success.is_none());
            }
        }
        let eligible = summary.trials - summary.excluded;
        assert_eq!(
            summary.fraction,
            Some(summary.successes as f64 / eligible as f64)
        );
        assert!(early_stopping_experiment(
            &TrialParams {
                noise_level: 0.0,
                ..params
            },
            0.1,
            &seeds
        )
        .is_err());
    }
}
