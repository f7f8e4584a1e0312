//! Command-line front end: `solve`, `theory`, `phase` and `verify`.
//!
//! Exit codes: 0 success (converged / all probes pass), 1 configuration or
//! runtime error, 2 step cap reached, 3 diverged, 4 work budget exceeded,
//! 5 a verification probe failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::activation::{ActivationKind, ActivationSpec};
use crate::error::DipError;
use crate::experiment::{run_grid_with, GridResult, GridSpec, RunOptions};
use crate::flow::{run_flow, FlowConfig, Outcome};
use crate::model::{init_network_with, VDistribution};
use crate::problem::{make_problem, read_matrix, Operator, OperatorKind};
use crate::rng::{derive_seed, trial_streams};
use crate::svg;
use crate::theory::{
    build_report, calibrate_c1, chernoff_required_k, probe_init_error, probe_jacobian_lipschitz,
    probe_sigma_min_concentration, required_width, LipschitzSummary, ProbeSummary, TheoryReport,
    DEFAULT_C1,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_STEP_CAP: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;
pub const EXIT_VERIFY_FAILED: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "dipflow",
    version,
    about = "Gradient-flow training of two-layer Deep Inverse Prior networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, value_name = "N", env = "DIPFLOW_THREADS")]
    pub threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one gradient-descent flow and write trajectory, report and plot.
    Solve(CommonArgs),
    /// Print the theory report of an initialization as JSON.
    Theory(CommonArgs),
    /// Run a success-frequency grid.
    Phase {
        #[command(flatten)]
        common: CommonArgs,
        /// Reuse the cells of a partial grid found in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the Monte-Carlo probes of the initialization bounds.
    Verify(CommonArgs),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub operator: OperatorKind,
    #[serde(default)]
    pub noise_level: f64,
    /// Matrix file for the custom operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub k: usize,
    pub d: usize,
    pub activation: ActivationKind,
    #[serde(default)]
    pub v_distribution: VDistribution,
}

fn default_failure_prob() -> f64 {
    0.05
}

fn default_c1() -> f64 {
    DEFAULT_C1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryOptions {
    /// Failure probability for the Chernoff width.
    #[serde(default = "default_failure_prob")]
    pub failure_prob: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            failure_prob: default_failure_prob(),
            c1: default_c1(),
        }
    }
}

/// Configuration of `solve` and `theory`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub theory: TheoryOptions,
}

fn positive(field: &str, v: usize) -> anyhow::Result<()> {
    if v == 0 {
        return Err(anyhow!("{field}: must be positive, got 0"));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        positive("problem.m", self.problem.m)?;
        positive("problem.n", self.problem.n)?;
        positive("network.k", self.network.k)?;
        positive("network.d", self.network.d)?;
        let nl = self.problem.noise_level;
        if !(nl >= 0.0) || !nl.is_finite() {
            return Err(anyhow!(
                "problem.noise_level: must be a finite nonnegative number"
            ));
        }
        match (self.problem.operator, &self.problem.matrix) {
            (OperatorKind::Custom, None) => {
                return Err(anyhow!("problem.matrix: required for the custom operator"))
            }
            (OperatorKind::Custom, Some(_)) => {}
            (_, Some(_)) => {
                return Err(anyhow!(
                    "problem.matrix: only allowed with the custom operator"
                ))
            }
            _ => {}
        }
        let tp = self.theory.failure_prob;
        if !(tp > 0.0 && tp <= 1.0) {
            return Err(anyhow!("theory.failure_prob: must lie in (0, 1]"));
        }
        if !(self.theory.c1 > 0.0) {
            return Err(anyhow!("theory.c1: must be positive"));
        }
        self.flow.validate()?;
        Ok(())
    }

    fn operator(&self) -> anyhow::Result<Operator> {
        Ok(match self.problem.operator {
            OperatorKind::Gaussian => Operator::Gaussian,
            OperatorKind::Identity => Operator::Identity,
            OperatorKind::Custom => {
                let path = self.problem.matrix.as_ref().expect("validated");
                let a = read_matrix(path)
                    .with_context(|| format!("problem.matrix: {}", path.display()))?;
                if a.shape() != (self.problem.m, self.problem.n) {
                    return Err(anyhow!(
                        "problem.matrix: file holds a {}x{} matrix but problem.m x problem.n is {}x{}",
                        a.nrows(),
                        a.ncols(),
                        self.problem.m,
                        self.problem.n
                    ));
                }
                Operator::Custom(a)
            }
        })
    }
}

/// Probe sections of the `verify` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaMinProbe {
    pub n: usize,
    pub d: usize,
    /// Width; defaults to the Chernoff width at failure probability
    /// `1 − min_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitErrorProbe {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub operator: OperatorKind,
    #[serde(default)]
    pub noise_level: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzProbe {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub pairs: usize,
}

fn default_min_fraction() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub activation: ActivationKind,
    #[serde(default)]
    pub v_distribution: VDistribution,
    /// Minimum passing fraction for the two probabilistic probes.
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    pub sigma_min: SigmaMinProbe,
    pub init_error: InitErrorProbe,
    pub lipschitz: LipschitzProbe,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl VerifyConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.min_fraction > 0.0 && self.min_fraction < 1.0) {
            return Err(anyhow!("min_fraction: must lie in (0, 1)"));
        }
        positive("sigma_min.n", self.sigma_min.n)?;
        positive("sigma_min.d", self.sigma_min.d)?;
        if let Some(k) = self.sigma_min.k {
            positive("sigma_min.k", k)?;
        }
        positive("sigma_min.trials", self.sigma_min.trials)?;
        let ie = &self.init_error;
        positive("init_error.k", ie.k)?;
        positive("init_error.d", ie.d)?;
        positive("init_error.n", ie.n)?;
        positive("init_error.m", ie.m)?;
        positive("init_error.trials", ie.trials)?;
        if ie.operator == OperatorKind::Custom {
            return Err(anyhow!(
                "init_error.operator: custom operators are not supported here"
            ));
        }
        if !(ie.noise_level >= 0.0) {
            return Err(anyhow!("init_error.noise_level: must be nonnegative"));
        }
        positive("lipschitz.k", self.lipschitz.k)?;
        positive("lipschitz.d", self.lipschitz.d)?;
        positive("lipschitz.n", self.lipschitz.n)?;
        positive("lipschitz.pairs", self.lipschitz.pairs)?;
        Ok(())
    }
}

/// Artifact wrapper embedding the configuration and seed.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<C, T> {
    pub config: C,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveBody {
    pub outcome: Outcome,
    pub steps: usize,
    pub final_loss: f64,
    pub report: TheoryReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TheoryBody {
    pub report: TheoryReport,
    pub chernoff_failure_prob: f64,
    pub chernoff_required_k: usize,
    pub c1: f64,
    pub required_width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeVerdict<T> {
    pub pass: bool,
    #[serde(flatten)]
    pub summary: T,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyBody {
    pub sigma_min_width: usize,
    pub sigma_min: ProbeVerdict<ProbeSummary>,
    pub init_error: ProbeVerdict<ProbeSummary>,
    pub lipschitz: ProbeVerdict<LipschitzSummary>,
    pub pass: bool,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow!("{}:{}:{}: {}", path.display(), e.line(), e.column(), e))
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("out: cannot create {}", dir.display()))?;
    let probe = dir.join(".dipflow-write-test");
    fs::write(&probe, b"").with_context(|| format!("out: {} is not writable", dir.display()))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn resolve_out(flag: &Option<PathBuf>, config: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| config.clone())
        .unwrap_or_else(|| PathBuf::from("dipflow-out"))
}

fn load_run_config(args: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup(
    cfg: &RunConfig,
) -> anyhow::Result<(crate::problem::InverseProblem, crate::model::DipNetwork)> {
    let (ps, ns) = trial_streams(cfg.seed);
    let p = &cfg.problem;
    let prob = make_problem(p.m, p.n, p.noise_level, ps, &cfg.operator()?)?;
    let nw = &cfg.network;
    let net = init_network_with(
        nw.k,
        nw.d,
        p.n,
        ActivationSpec::new(nw.activation),
        nw.v_distribution,
        ns,
    )?;
    Ok((prob, net))
}

pub fn cmd_solve(args: &CommonArgs) -> anyhow::Result<u8> {
    let cfg = load_run_config(args)?;
    let out = resolve_out(&args.out, &cfg.out);
    prepare_out(&out)?;
    let (prob, mut net) = setup(&cfg)?;
    let report = build_report(&net, &prob)?;
    let traj = run_flow(&mut net, &prob, &cfg.flow)?;
    let config_json = serde_json::to_string(&cfg)?;

    let preamble = format!("config: {config_json}\nseed: {}", cfg.seed);
    let mut csv = Vec::new();
    traj.write_csv(&mut csv, Some(&preamble))?;
    fs::write(out.join("trajectory.csv"), csv)?;
    let body = SolveBody {
        outcome: traj.outcome,
        steps: traj.final_step(),
        final_loss: traj.last().loss,
        report: report.clone(),
    };
    write_json(
        &out.join("report.json"),
        &Artifact {
            config: &cfg,
            seed: cfg.seed,
            body,
        },
    )?;
    let meta = serde_json::json!({ "config": &cfg, "seed": cfg.seed }).to_string();
    fs::write(
        out.join("decay.svg"),
        svg::decay_curve(&traj, &report, &meta),
    )?;

    println!(
        "outcome={} steps={} final_loss={:e}",
        serde_json::to_value(traj.outcome)?
            .as_str()
            .unwrap_or_default(),
        traj.final_step(),
        traj.last().loss
    );
    Ok(match traj.outcome {
        Outcome::Converged => EXIT_OK,
        Outcome::StepCap => EXIT_STEP_CAP,
        Outcome::Diverged => EXIT_DIVERGED,
    })
}

pub fn theory_output(cfg: &RunConfig) -> anyhow::Result<Artifact<RunConfig, TheoryBody>> {
    let (prob, net) = setup(cfg)?;
    let report = build_report(&net, &prob)?;
    let chernoff = chernoff_required_k(
        cfg.problem.n,
        &net.activation,
        net.d_bound,
        cfg.theory.failure_prob,
    )?;
    let width = required_width(
        cfg.problem.n,
        cfg.problem.m,
        cfg.network.d,
        prob.kappa_a(),
        cfg.theory.c1,
    );
    Ok(Artifact {
        config: cfg.clone(),
        seed: cfg.seed,
        body: TheoryBody {
            report,
            chernoff_failure_prob: cfg.theory.failure_prob,
            chernoff_required_k: chernoff,
            c1: cfg.theory.c1,
            required_width: width,
        },
    })
}

pub fn cmd_theory(args: &CommonArgs) -> anyhow::Result<u8> {
    let cfg = load_run_config(args)?;
    let output = theory_output(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(EXIT_OK)
}

pub const GRID_JSON: &str = "grid.json";
pub const GRID_PARTIAL: &str = "grid.partial.json";

pub fn cmd_phase(args: &CommonArgs, resume: bool) -> anyhow::Result<u8> {
    let mut spec: GridSpec = read_config(&args.config)?;
    if let Some(s) = args.seed {
        spec.master_seed = s;
    }
    spec.validate()?;
    let out = resolve_out(&args.out, &None);
    prepare_out(&out)?;
    let partial_path = out.join(GRID_PARTIAL);

    let previous = if resume {
        let path = [out.join(GRID_JSON), partial_path.clone()]
            .into_iter()
            .find(|p| p.exists());
        match path {
            Some(p) => {
                let prev: GridResult = read_config(&p)?;
                if prev.spec != spec {
                    return Err(anyhow!(
                        "resume: {} was produced by a different grid spec",
                        p.display()
                    ));
                }
                Some(prev)
            }
            None => None,
        }
    } else {
        None
    };

    let (tx, rx) = mpsc::channel();
    let writer_spec = spec.clone();
    let writer_path = partial_path.clone();
    let mut seen = previous
        .as_ref()
        .map(|p| p.cells.clone())
        .unwrap_or_default();
    let writer = std::thread::spawn(move || -> anyhow::Result<()> {
        for cell in rx {
            seen.push(cell);
            seen.sort_by_key(|c: &crate::experiment::CellResult| (c.axis1_index, c.axis2_index));
            let partial = GridResult {
                spec: writer_spec.clone(),
                cells: seen.clone(),
                complete: false,
            };
            write_json(&writer_path, &partial)?;
        }
        Ok(())
    });
    let result = run_grid_with(
        &spec,
        RunOptions {
            progress: Some(tx),
            previous,
            ..RunOptions::default()
        },
    );
    writer
        .join()
        .map_err(|_| anyhow!("partial-result writer panicked"))??;
    let result = result?;

    write_json(&out.join(GRID_JSON), &result)?;
    let preamble = format!(
        "config: {}\nseed: {}",
        serde_json::to_string(&spec)?,
        spec.master_seed
    );
    let mut csv = Vec::new();
    result.write_csv(&mut csv, Some(&preamble))?;
    fs::write(out.join("grid.csv"), csv)?;
    let meta = serde_json::json!({ "config": &spec, "seed": spec.master_seed }).to_string();
    fs::write(out.join("heatmap.svg"), svg::heatmap(&result, &meta))?;
    if result.complete {
        let _ = fs::remove_file(&partial_path);
    }

    println!("cells={} complete={}", result.cells.len(), result.complete);
    let boundaries = result.phase_boundaries(0.9);
    if let Some(c1) = calibrate_c1(&boundaries) {
        println!(
            "c1_estimate={c1:e} from {} boundary points",
            boundaries.len()
        );
    }
    Ok(EXIT_OK)
}

pub fn verify_output(cfg: &VerifyConfig) -> anyhow::Result<Artifact<VerifyConfig, VerifyBody>> {
    let act = ActivationSpec::new(cfg.activation);
    let sm = &cfg.sigma_min;
    let width = match sm.k {
        Some(k) => k,
        None => chernoff_required_k(
            sm.n,
            &act,
            cfg.v_distribution.bound(),
            1.0 - cfg.min_fraction,
        )?,
    };
    let sigma = probe_sigma_min_concentration(
        width,
        sm.d,
        sm.n,
        act,
        cfg.v_distribution,
        sm.trials,
        derive_seed(cfg.seed, 0),
    )?;
    let ie = cfg.init_error.clone();
    let operator = match ie.operator {
        OperatorKind::Identity => Operator::Identity,
        _ => Operator::Gaussian,
    };
    let init = probe_init_error(
        ie.k,
        ie.d,
        ie.n,
        act,
        cfg.v_distribution,
        |s| make_problem(ie.m, ie.n, ie.noise_level, s, &operator),
        ie.trials,
        derive_seed(cfg.seed, 1),
    )?;
    let lp = &cfg.lipschitz;
    let lip_net = init_network_with(
        lp.k,
        lp.d,
        lp.n,
        act,
        cfg.v_distribution,
        derive_seed(cfg.seed, 2),
    )?;
    let lip = probe_jacobian_lipschitz(&lip_net, lp.pairs, derive_seed(cfg.seed, 3))?;

    let sigma_min = ProbeVerdict {
        pass: sigma.fraction >= cfg.min_fraction,
        summary: sigma,
    };
    let init_error = ProbeVerdict {
        pass: init.fraction >= cfg.min_fraction,
        summary: init,
    };
    let lipschitz = ProbeVerdict {
        pass: lip.violations == 0,
        summary: lip,
    };
    let pass = sigma_min.pass && init_error.pass && lipschitz.pass;
    Ok(Artifact {
        config: cfg.clone(),
        seed: cfg.seed,
        body: VerifyBody {
            sigma_min_width: width,
            sigma_min,
            init_error,
            lipschitz,
            pass,
        },
    })
}

pub fn cmd_verify(args: &CommonArgs) -> anyhow::Result<u8> {
    let mut cfg: VerifyConfig = read_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = resolve_out(&args.out, &cfg.out);
    prepare_out(&out)?;
    let result = verify_output(&cfg)?;
    write_json(&out.join("verify.json"), &result)?;
    let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
    let b = &result.body;
    println!(
        "sigma_min    {} fraction={:.3} (k={})",
        verdict(b.sigma_min.pass),
        b.sigma_min.summary.fraction,
        b.sigma_min_width
    );
    println!(
        "init_error   {} fraction={:.3}",
        verdict(b.init_error.pass),
        b.init_error.summary.fraction
    );
    println!(
        "lipschitz    {} max_ratio/bound={:.3}",
        verdict(b.lipschitz.pass),
        b.lipschitz.summary.max_ratio / b.lipschitz.summary.bound
    );
    Ok(if b.pass { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn threads(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Solve(c) | Command::Theory(c) | Command::Verify(c) => c.threads,
        Command::Phase { common, .. } => common.threads,
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads(&cli.command) {
        if t == 0 {
            return Err(anyhow!("threads: must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build()?;
    pool.install(|| match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Theory(c) => cmd_theory(c),
        Command::Phase { common, resume } => cmd_phase(common, *resume),
        Command::Verify(c) => cmd_verify(c),
    })
}

/// Maps an error to its exit code.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<DipError>() {
        Some(DipError::BudgetExceeded { .. }) => EXIT_BUDGET,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        serde_json::from_str(
            r#"{"problem": {"m": 2, "n": 3}, "network": {"k": 10, "d": 4, "activation": "tanh"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = base();
        assert_eq!(cfg.flow, FlowConfig::default());
        assert_eq!(cfg.problem.operator, OperatorKind::Gaussian);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.problem.n = 0;
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("problem.n"));
        let mut bad = cfg.clone();
        bad.problem.operator = OperatorKind::Custom;
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("problem.matrix"));
        let mut bad = cfg;
        bad.flow.step_size = -1.0;
        assert!(format!("{:#}", bad.validate().unwrap_err()).contains("flow.step_size"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: Result<RunConfig, _> = serde_json::from_str(
            r#"{"problem": {"m": 2, "n": 3, "q": 1}, "network": {"k": 10, "d": 4, "activation": "tanh"}}"#,
        );
        assert!(r.unwrap_err().to_string().contains("q"));
    }

    #[test]
    fn theory_output_consistency() {
        let out = theory_output(&base()).unwrap();
        let r = &out.body.report;
        assert_eq!(r.condition_eq5, r.r_prime < r.r);
        let text = serde_json::to_string(&out).unwrap();
        let back: Artifact<RunConfig, TheoryBody> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.body.report, out.body.report);
        assert_eq!(back.config, base());
    }

    #[test]
    fn budget_maps_to_exit_four() {
        let e = anyhow::Error::new(DipError::BudgetExceeded {
            estimate: 2.0,
            budget: 1.0,
        });
        assert_eq!(exit_code_for(&e), EXIT_BUDGET);
        assert_eq!(exit_code_for(&anyhow!("x")), EXIT_CONFIG);
    }
}
