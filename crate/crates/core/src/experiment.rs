//! Experiment configuration, single runs, sweeps and their CSV/JSON output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geneq::{newton_subproblem, Linearization, NewtonConfig, StepOptions, Termination, Trace};
use crate::iss::{
    asymptotic_error, ball_containment, estimate_iss_gains, fit_quadratic_rate, iss_bound_certificate, observed_rate,
    BallOptions, DisturbanceSequence,
};
use crate::multistep::{run_multistep, InnerMode, MultistepConfig};
use crate::nlp::{run_alm, run_kkt_newton, run_sqp, AlmConfig, BroydenFamily, NlpProblem, Perturbation, SqpConfig};
use crate::registry::{self, InlineProblem, Problem};
use crate::subproblem::estimate_kappa;

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "ISS_NEWTON_OUT_DIR";
/// Output directory when neither the config nor the environment sets one.
pub const DEFAULT_OUT_DIR: &str = "iss-newton-out";
/// Header of the aggregated sweep CSV.
pub const SWEEP_HEADER: &[&str] = &[
    "problem",
    "algorithm",
    "rho",
    "delta",
    "seed",
    "status",
    "termination",
    "iterations",
    "final_residual",
    "final_error",
    "asymptotic_error",
    "alpha",
    "gamma",
    "iss_feasible",
    "rate",
];

/// Failure classes of the experiment runner, mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Solver(_) => 1,
            ExperimentError::Config(_) => 2,
            ExperimentError::Io(_) => 1,
        }
    }
}

type ExpResult<T> = std::result::Result<T, ExperimentError>;

fn config_err(e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Newton,
    QuasiNewton,
    Sqp,
    SqpBfgs,
    SqpDfp,
    SeqConvex,
    Pgd,
    Alm,
    Multistep,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Newton,
        Algorithm::QuasiNewton,
        Algorithm::Sqp,
        Algorithm::SqpBfgs,
        Algorithm::SqpDfp,
        Algorithm::SeqConvex,
        Algorithm::Pgd,
        Algorithm::Alm,
        Algorithm::Multistep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Newton => "newton",
            Algorithm::QuasiNewton => "quasi-newton",
            Algorithm::Sqp => "sqp",
            Algorithm::SqpBfgs => "sqp-bfgs",
            Algorithm::SqpDfp => "sqp-dfp",
            Algorithm::SeqConvex => "seq-convex",
            Algorithm::Pgd => "pgd",
            Algorithm::Alm => "alm",
            Algorithm::Multistep => "multistep",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|a| a.name()).collect()
    }

    /// Algorithms that need a program rather than a plain equation.
    fn needs_program(self) -> bool {
        matches!(
            self,
            Algorithm::Sqp | Algorithm::SqpBfgs | Algorithm::SqpDfp | Algorithm::SeqConvex | Algorithm::Alm
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ExperimentError;

    fn from_str(s: &str) -> ExpResult<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s).ok_or_else(|| {
            ExperimentError::Config(format!(
                "unknown algorithm '{s}'; valid names: {}",
                Self::names().join(", ")
            ))
        })
    }
}

/// Textual disturbance description: `zero`, `constant:C`, `decaying:C:RATE`
/// or `random:DELTA[:seed=S]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceSpec {
    Zero,
    Constant(f64),
    Decaying { c: f64, rate: f64 },
    Random { delta: f64, seed: u64 },
}

impl DisturbanceSpec {
    pub fn sequence(&self) -> ExpResult<DisturbanceSequence> {
        match *self {
            DisturbanceSpec::Zero => Ok(DisturbanceSequence::zero()),
            DisturbanceSpec::Constant(c) => DisturbanceSequence::constant(c),
            DisturbanceSpec::Decaying { c, rate } => DisturbanceSequence::decaying(c, rate),
            DisturbanceSpec::Random { delta, seed } => DisturbanceSequence::random_bounded(delta, seed),
        }
        .map_err(config_err)
    }

    /// Replaces the magnitude; `zero` becomes `random`.
    pub fn with_magnitude(self, delta: f64) -> Self {
        match self {
            DisturbanceSpec::Zero => DisturbanceSpec::Random { delta, seed: 0 },
            DisturbanceSpec::Constant(_) => DisturbanceSpec::Constant(delta),
            DisturbanceSpec::Decaying { rate, .. } => DisturbanceSpec::Decaying { c: delta, rate },
            DisturbanceSpec::Random { seed, .. } => DisturbanceSpec::Random { delta, seed },
        }
    }

    /// Replaces the seed of a random disturbance; other kinds are unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            DisturbanceSpec::Random { delta, .. } => DisturbanceSpec::Random { delta, seed },
            other => other,
        }
    }

    pub fn magnitude(&self) -> f64 {
        match *self {
            DisturbanceSpec::Zero => 0.0,
            DisturbanceSpec::Constant(c) => c.abs(),
            DisturbanceSpec::Decaying { c, .. } => c.abs(),
            DisturbanceSpec::Random { delta, .. } => delta,
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            DisturbanceSpec::Random { seed, .. } => seed,
            _ => 0,
        }
    }
}

impl fmt::Display for DisturbanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DisturbanceSpec::Zero => write!(f, "zero"),
            DisturbanceSpec::Constant(c) => write!(f, "constant:{c:e}"),
            DisturbanceSpec::Decaying { c, rate } => write!(f, "decaying:{c:e}:{rate}"),
            DisturbanceSpec::Random { delta, seed } => write!(f, "random:{delta:e}:seed={seed}"),
        }
    }
}

impl FromStr for DisturbanceSpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> ExpResult<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| -> ExpResult<f64> {
            t.parse::<f64>()
                .map_err(|_| ExperimentError::Config(format!("bad number '{t}' in disturbance '{s}'")))
        };
        let spec = match parts.as_slice() {
            ["zero"] | ["none"] => DisturbanceSpec::Zero,
            ["constant", c] => DisturbanceSpec::Constant(num(c)?),
            ["decaying", c, rate] => DisturbanceSpec::Decaying {
                c: num(c)?,
                rate: num(rate)?,
            },
            ["random", delta] => DisturbanceSpec::Random {
                delta: num(delta)?,
                seed: 0,
            },
            ["random", delta, seed] => {
                let seed = seed.strip_prefix("seed=").unwrap_or(seed);
                DisturbanceSpec::Random {
                    delta: num(delta)?,
                    seed: seed
                        .parse()
                        .map_err(|_| ExperimentError::Config(format!("bad seed '{seed}' in disturbance '{s}'")))?,
                }
            }
            _ => {
                return Err(ExperimentError::Config(format!(
                "cannot parse disturbance '{s}'; expected zero, constant:C, decaying:C:RATE or random:DELTA[:seed=S]"
            )))
            }
        };
        spec.sequence()?;
        Ok(spec)
    }
}

/// Where the disturbance enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Additive on the (KKT) map `f`.
    F,
    /// Additive on the constraint values `g`.
    DataG,
    /// Additive on the objective gradient.
    DataGradH,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::F => "f",
            Target::DataG => "data-g",
            Target::DataGradH => "data-grad-h",
        }
    }
}

impl FromStr for Target {
    type Err = ExperimentError;

    fn from_str(s: &str) -> ExpResult<Self> {
        match s {
            "f" => Ok(Target::F),
            "data-g" => Ok(Target::DataG),
            "data-grad-h" => Ok(Target::DataGradH),
            _ => Err(ExperimentError::Config(format!(
                "unknown disturbance target '{s}'; valid: f, data-g, data-grad-h"
            ))),
        }
    }
}

/// Initial Hessian approximation of the quasi-Newton SQP variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialHessian {
    /// Scaled identity from a probe step.
    Heuristic,
    Identity,
    /// `∇²L(x₀, y₀)`.
    StartHessian,
    /// `∇²L(x̄, ȳ)`; needs a known solution.
    SolutionHessian,
}

/// Problem reference: a registry name, a path to a TOML file with an inline
/// problem, or an inline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Name(String),
    Inline(InlineProblem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub enable_oracle: bool,
    /// ALM penalty.
    pub rho: f64,
    /// Inner solve of the multistep method: `exact`, `newton:N` or
    /// `noise:SIGMA[:seed=S]`.
    pub inner: String,
    /// Projected-gradient step size.
    pub alpha: f64,
    pub b0: InitialHessian,
    pub divergence_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            enable_oracle: false,
            rho: 10.0,
            inner: "exact".into(),
            alpha: 0.1,
            b0: InitialHessian::Heuristic,
            divergence_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rho: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Base file name; defaults to `<problem>-<algorithm>`.
    pub name: Option<String>,
}

/// The experiment file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemRef,
    pub algorithm: String,
    #[serde(default = "default_disturbance")]
    pub disturbance: String,
    pub target: Option<String>,
    /// Start point, stacked `(x, y)` for programs.
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_disturbance() -> String {
    "zero".into()
}

impl ExperimentConfig {
    pub fn new(problem: &str, algorithm: &str) -> Self {
        Self {
            problem: ProblemRef::Name(problem.into()),
            algorithm: algorithm.into(),
            disturbance: default_disturbance(),
            target: None,
            start: None,
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> ExpResult<Self> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> ExpResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn problem_label(&self) -> String {
        match &self.problem {
            ProblemRef::Name(n) => Path::new(n)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| n.clone()),
            ProblemRef::Inline(_) => "inline".into(),
        }
    }

    /// Output directory: config, then the environment, then the default.
    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn base_name(&self) -> String {
        self.output
            .name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.problem_label(), self.algorithm))
    }

    /// Resolves names and parses every textual field.
    pub fn resolve(&self) -> ExpResult<Experiment> {
        let algorithm: Algorithm = self.algorithm.parse()?;
        let mut problem = match &self.problem {
            ProblemRef::Name(name) if name.ends_with(".toml") => {
                let text = fs::read_to_string(name)
                    .map_err(|e| ExperimentError::Config(format!("cannot read problem file {name}: {e}")))?;
                let inline: InlineProblem = toml::from_str(&text).map_err(config_err)?;
                inline.build().map_err(config_err)?
            }
            ProblemRef::Name(name) => registry::problem(name).map_err(config_err)?,
            ProblemRef::Inline(inline) => inline.build().map_err(config_err)?,
        };
        if let Some(start) = &self.start {
            problem = problem
                .with_start(DVector::from_column_slice(start))
                .map_err(config_err)?;
        }
        let disturbance: DisturbanceSpec = self.disturbance.parse()?;
        let target = match &self.target {
            Some(t) => t.parse()?,
            None => default_target(&problem, algorithm),
        };
        let inner = parse_inner(&self.solver.inner)?;
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(config_err("solver.tol must be positive and solver.max_iter nonzero"));
        }
        if !(s.rho > 0.0) {
            return Err(config_err(format!("solver.rho must be positive, got {}", s.rho)));
        }
        if !(s.alpha > 0.0) {
            return Err(config_err(format!("solver.alpha must be positive, got {}", s.alpha)));
        }
        let exp = Experiment {
            label: self.problem_label(),
            problem,
            algorithm,
            disturbance,
            target,
            inner,
            solver: s.clone(),
        };
        exp.check_compatible()?;
        Ok(exp)
    }

    /// Sweep grid sorted by `(rho, delta, seed)`.
    pub fn grid(&self) -> ExpResult<Vec<GridPoint>> {
        let sw = &self.sweep;
        if sw.rho.is_none() && sw.delta.is_none() && sw.seeds.is_none() {
            return Err(config_err(
                "sweep needs at least one of sweep.rho, sweep.delta, sweep.seeds",
            ));
        }
        let base: DisturbanceSpec = self.disturbance.parse()?;
        let rhos = sw.rho.clone().unwrap_or_else(|| vec![self.solver.rho]);
        let deltas: Vec<Option<f64>> = match &sw.delta {
            Some(d) => d.iter().map(|x| Some(*x)).collect(),
            None => vec![None],
        };
        let seeds = sw.seeds.clone().unwrap_or_else(|| vec![base.seed()]);
        if rhos.is_empty() || deltas.is_empty() || seeds.is_empty() {
            return Err(config_err("sweep grid is empty"));
        }
        if rhos.iter().any(|r| !(*r > 0.0)) || deltas.iter().flatten().any(|d| !(*d >= 0.0)) {
            return Err(config_err(
                "sweep values must be positive (rho) and nonnegative (delta)",
            ));
        }
        let mut grid = Vec::new();
        for &rho in &rhos {
            for &delta in &deltas {
                for &seed in &seeds {
                    let spec = match delta {
                        Some(d) => base.with_magnitude(d),
                        None => base,
                    }
                    .with_seed(seed);
                    grid.push(GridPoint {
                        rho,
                        delta: spec.magnitude(),
                        seed,
                        disturbance: spec,
                    });
                }
            }
        }
        grid.sort_by(|a, b| {
            a.rho
                .total_cmp(&b.rho)
                .then(a.delta.total_cmp(&b.delta))
                .then(a.seed.cmp(&b.seed))
        });
        Ok(grid)
    }
}

fn default_target(problem: &Problem, algorithm: Algorithm) -> Target {
    match (problem, algorithm) {
        (Problem::Nlp { .. }, Algorithm::SqpBfgs | Algorithm::SqpDfp | Algorithm::Alm | Algorithm::Multistep) => {
            Target::DataG
        }
        _ => Target::F,
    }
}

fn parse_inner(s: &str) -> ExpResult<InnerMode> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || {
        ExperimentError::Config(format!(
            "cannot parse inner mode '{s}'; expected exact, newton:N or noise:SIGMA[:seed=S]"
        ))
    };
    match parts.as_slice() {
        ["exact"] => Ok(InnerMode::Exact),
        ["newton", n] => Ok(InnerMode::NewtonSteps(n.parse().map_err(|_| bad())?)),
        ["noise", sigma] => Ok(InnerMode::Noise {
            sigma: sigma.parse().map_err(|_| bad())?,
            seed: 0,
        }),
        ["noise", sigma, seed] => Ok(InnerMode::Noise {
            sigma: sigma.parse().map_err(|_| bad())?,
            seed: seed.strip_prefix("seed=").unwrap_or(seed).parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub rho: f64,
    pub delta: f64,
    pub seed: u64,
    pub disturbance: DisturbanceSpec,
}

/// A resolved, validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub label: String,
    pub problem: Problem,
    pub algorithm: Algorithm,
    pub disturbance: DisturbanceSpec,
    pub target: Target,
    pub inner: InnerMode,
    pub solver: SolverConfig,
}

impl Experiment {
    fn check_compatible(&self) -> ExpResult<()> {
        let a = self.algorithm;
        match &self.problem {
            Problem::Equation { multistep, .. } => {
                if a.needs_program() {
                    return Err(config_err(format!(
                        "algorithm '{a}' needs a program, '{}' is an equation",
                        self.label
                    )));
                }
                if a == Algorithm::Multistep && multistep.is_none() {
                    return Err(config_err(format!(
                        "'{}' has no two-block structure for multistep",
                        self.label
                    )));
                }
                if self.target != Target::F {
                    return Err(config_err("equations only support the disturbance target 'f'"));
                }
            }
            Problem::Nlp { nlp, .. } => {
                let data_only = matches!(
                    a,
                    Algorithm::SqpBfgs | Algorithm::SqpDfp | Algorithm::Alm | Algorithm::Multistep
                );
                if data_only && self.target == Target::F {
                    return Err(config_err(format!(
                        "algorithm '{a}' takes disturbances on the problem data (data-g or data-grad-h)"
                    )));
                }
                if self.target == Target::DataG && nlp.m() == 0 {
                    return Err(config_err("target 'data-g' needs at least one constraint"));
                }
                if self.solver.b0 == InitialHessian::SolutionHessian && nlp.solution().is_none() {
                    return Err(config_err("b0 = solution-hessian needs a known solution"));
                }
            }
        }
        Ok(())
    }

    /// Whether the penalty `ϱ` affects this run.
    pub fn uses_penalty(&self) -> bool {
        match self.algorithm {
            Algorithm::Alm => true,
            Algorithm::Multistep => matches!(self.problem, Problem::Nlp { .. }),
            _ => false,
        }
    }

    fn newton_config(&self) -> NewtonConfig {
        NewtonConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            enable_oracle: self.solver.enable_oracle,
            divergence_bound: self.solver.divergence_bound,
            step: StepOptions::default(),
        }
    }

    fn linearization(&self, primal_dim: usize) -> Linearization {
        match self.algorithm {
            Algorithm::QuasiNewton => Linearization::GradientPlusNoise,
            Algorithm::Sqp => Linearization::SqpHessian {
                primal_dim,
                hessian: None,
            },
            Algorithm::SeqConvex => Linearization::ZeroHessian { primal_dim },
            Algorithm::Pgd => Linearization::ScaledIdentity {
                alpha: self.solver.alpha,
            },
            _ => Linearization::ExactGradient,
        }
    }

    fn nlp_with_target(&self, nlp: &NlpProblem) -> NlpProblem {
        match self.target {
            Target::DataGradH => nlp.clone().with_perturbation(Perturbation::AdditiveOnGradH),
            _ => nlp.clone().with_perturbation(Perturbation::AdditiveOnG),
        }
    }

    /// Runs the experiment with the configured disturbance.
    pub fn run(&self) -> ExpResult<RunOutcome> {
        self.run_with(self.disturbance, self.solver.rho)
    }

    /// Runs with an overriding disturbance and penalty (sweeps).
    pub fn run_with(&self, spec: DisturbanceSpec, rho: f64) -> ExpResult<RunOutcome> {
        let dist = spec.sequence()?;
        let cfg = self.newton_config();
        let mut dual_discrepancy = None;
        let mut hessian_errors = None;
        let trace = match &self.problem {
            Problem::Equation { ge, z0, multistep } => match self.algorithm {
                Algorithm::Multistep => {
                    let mp = multistep.as_ref().expect("checked on resolve");
                    let (x0, y0) = mp.unstack(z0);
                    run_multistep(mp, &x0, &y0, &dist, &self.multistep_config())
                        .map_err(solver_err)?
                        .trace
                }
                _ => crate::geneq::run_newton(&ge.additive_on_f(), &self.linearization(0), z0, &dist, &cfg)
                    .map_err(solver_err)?,
            },
            Problem::Nlp { nlp, x0, y0 } => {
                let n = nlp.n();
                match self.algorithm {
                    Algorithm::SqpBfgs | Algorithm::SqpDfp => {
                        let nlp = self.nlp_with_target(nlp);
                        let family = if self.algorithm == Algorithm::SqpBfgs {
                            BroydenFamily::Bfgs
                        } else {
                            BroydenFamily::Dfp
                        };
                        let b0 = self.initial_hessian(&nlp, x0, y0);
                        let scfg = SqpConfig {
                            family,
                            tol: self.solver.tol,
                            max_iter: self.solver.max_iter,
                            enable_oracle: self.solver.enable_oracle,
                            divergence_bound: self.solver.divergence_bound,
                            ..SqpConfig::default()
                        };
                        let run = run_sqp(&nlp, x0, y0, b0, &dist, &scfg).map_err(solver_err)?;
                        hessian_errors = run.hessian_errors.clone();
                        run.trace
                    }
                    Algorithm::Alm | Algorithm::Multistep => {
                        let nlp = self.nlp_with_target(nlp);
                        let acfg = AlmConfig {
                            rho,
                            inner: self.inner,
                            max_outer: self.solver.max_iter,
                            tol: self.solver.tol,
                            ..AlmConfig::default()
                        };
                        let run = run_alm(&nlp, x0, y0, &dist, &acfg).map_err(solver_err)?;
                        dual_discrepancy = Some(run.dual_update_discrepancy.iter().copied().fold(0.0, f64::max));
                        run.run.trace
                    }
                    _ => {
                        let lin = self.linearization(n);
                        if self.target == Target::F {
                            let ge = nlp.kkt_equation().additive_on_f();
                            crate::geneq::run_newton(&ge, &lin, &nlp.stack(x0, y0), &dist, &cfg).map_err(solver_err)?
                        } else {
                            run_kkt_newton(&self.nlp_with_target(nlp), &lin, x0, y0, &dist, &cfg).map_err(solver_err)?
                        }
                    }
                }
            }
        };
        let summary = self.summarize(&trace, spec, rho, dual_discrepancy, hessian_errors.as_deref());
        Ok(RunOutcome { trace, summary })
    }

    fn multistep_config(&self) -> MultistepConfig {
        MultistepConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            inner: self.inner,
            divergence_bound: self.solver.divergence_bound,
            ..MultistepConfig::default()
        }
    }

    fn initial_hessian(&self, nlp: &NlpProblem, x0: &DVector<f64>, y0: &DVector<f64>) -> Option<DMatrix<f64>> {
        let v0 = DVector::zeros(nlp.dim_v());
        match self.solver.b0 {
            InitialHessian::Heuristic => None,
            InitialHessian::Identity => Some(DMatrix::identity(nlp.n(), nlp.n())),
            InitialHessian::StartHessian => Some(nlp.hess_lagrangian(x0, y0, &v0)),
            InitialHessian::SolutionHessian => nlp.solution().map(|(x, y)| nlp.hess_lagrangian(x, y, &v0)),
        }
    }

    /// Regularity of the exact linearization at the known solution.
    fn regularity(&self) -> Option<Regularity> {
        let (ge, zbar) = match &self.problem {
            Problem::Equation { ge, .. } => (ge.clone(), ge.zbar()?.clone()),
            Problem::Nlp { nlp, .. } => (nlp.kkt_equation(), nlp.zbar()?),
        };
        let avi = newton_subproblem(&ge, &Linearization::ExactGradient, &zbar, &ge.zero_disturbance()).ok()?;
        let est = estimate_kappa(&avi, &zbar, 1e-3, 20, 0).ok()?;
        Some(Regularity {
            kappa: est.kappa,
            max_pattern_inverse_norm: est.max_pattern_inverse_norm(),
            kappa_upper: est.kappa_upper(),
        })
    }

    fn summarize(
        &self,
        trace: &Trace,
        spec: DisturbanceSpec,
        rho: f64,
        dual_discrepancy: Option<f64>,
        hessian_errors: Option<&[f64]>,
    ) -> Summary {
        let sup_norm = spec.sequence().map(|d| d.sup_norm()).unwrap_or(f64::NAN);
        let zbar = self.problem.zbar();
        let errors = trace.errors_to_zbar.clone();
        let iss = zbar.as_ref().and_then(|z| estimate_iss_gains(trace, z).ok());
        let asym = errors.as_ref().map(|e| asymptotic_error(e, 0.25));
        let kappa_hat = trace
            .step_kappas
            .iter()
            .copied()
            .filter(|k| k.is_finite())
            .fold(0.0, f64::max);
        let quadratic = match (self.algorithm, &zbar) {
            (Algorithm::Newton | Algorithm::QuasiNewton | Algorithm::Sqp, Some(z)) => {
                fit_quadratic_rate(trace, z, (1e-8, 1e-2), kappa_hat)
                    .ok()
                    .map(|q| QuadraticSummary {
                        c: q.c,
                        quadratic: q.quadratic,
                        steps: q.steps,
                    })
            }
            _ => None,
        };
        let rate = errors.as_ref().and_then(|e| observed_rate(e, 1e-13));
        let iss_bound = match (&iss, &errors) {
            (Some(est), Some(e)) if est.feasible => Some(iss_bound_certificate(e, sup_norm, est)),
            _ => None,
        };
        let ball = match (&iss, &zbar) {
            (Some(est), Some(z)) if est.feasible => {
                Some(ball_containment(&[(trace, sup_norm)], z, est.asymptotic_gain(), &BallOptions::default()).all_pass)
            }
            _ => None,
        };
        let failed = matches!(trace.termination, Termination::StepFailed | Termination::Diverged);
        Summary {
            problem: self.label.clone(),
            algorithm: self.algorithm.name().into(),
            disturbance: spec.to_string(),
            target: self.target.name().into(),
            sup_norm,
            rho: self.uses_penalty().then_some(rho),
            status: if failed { "failed" } else { "ok" }.into(),
            termination: trace.termination,
            error: trace.failed_step().map(|e| e.to_string()),
            iterations: trace.steps(),
            final_residual: trace.final_residual(),
            final_error: errors.as_ref().and_then(|e| e.last().copied()),
            asymptotic_error: asym,
            iss: iss.map(|e| IssSummary {
                alpha: e.alpha,
                gamma: e.gamma,
                feasible: e.feasible,
                asymptotic_gain: e.asymptotic_gain(),
            }),
            quadratic,
            observed_rate: rate,
            regularity: self.regularity(),
            final_hessian_error: hessian_errors.and_then(|h| h.last().copied()),
            checks: Checks {
                converged: trace.termination == Termination::Converged,
                iss_bound,
                ball,
                dual_update: dual_discrepancy.map(|d| d <= 1e-10),
            },
        }
    }
}

fn solver_err(e: crate::Error) -> ExperimentError {
    match e {
        crate::Error::DimensionMismatch { .. }
        | crate::Error::InvalidParameter(_)
        | crate::Error::InvalidBounds { .. } => ExperimentError::Config(e.to_string()),
        other => ExperimentError::Solver(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IssSummary {
    pub alpha: f64,
    pub gamma: f64,
    pub feasible: bool,
    pub asymptotic_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticSummary {
    pub c: f64,
    pub quadratic: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regularity {
    pub kappa: f64,
    pub max_pattern_inverse_norm: f64,
    pub kappa_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checks {
    pub converged: bool,
    /// `e_k ≤ α̂^k e_0 + γ̂ ‖v‖∞ / (1 - α̂)` along the trace.
    pub iss_bound: Option<bool>,
    /// Final-quarter error within `γ̂/(1-α̂) ‖v‖∞ (1 + 10%)`.
    pub ball: Option<bool>,
    /// Closed-form multiplier update equals the outer inclusion to `1e-10`.
    pub dual_update: Option<bool>,
}

/// JSON summary of one run; see `schema/summary.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub problem: String,
    pub algorithm: String,
    pub disturbance: String,
    pub target: String,
    pub sup_norm: f64,
    pub rho: Option<f64>,
    pub status: String,
    pub termination: Termination,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_error: Option<f64>,
    pub asymptotic_error: Option<f64>,
    pub iss: Option<IssSummary>,
    pub quadratic: Option<QuadraticSummary>,
    pub observed_rate: Option<f64>,
    pub regularity: Option<Regularity>,
    pub final_hessian_error: Option<f64>,
    pub checks: Checks,
}

impl Summary {
    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub summary: Summary,
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:e}")
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Per-run trace CSV: `k, z1.., v1.., residual, error_to_zbar`. The final
/// iterate has no disturbance, so its `v` cells are empty.
pub fn trace_csv(trace: &Trace) -> ExpResult<Vec<u8>> {
    let nz = trace.iterates.first().map_or(0, |z| z.len());
    let nv = trace.disturbances.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    header.extend((1..=nz).map(|i| format!("z{i}")));
    header.extend((1..=nv).map(|i| format!("v{i}")));
    header.push("residual".into());
    header.push("error_to_zbar".into());
    w.write_record(&header).map_err(csv_err)?;
    for (k, z) in trace.iterates.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(z.iter().map(|x| num(*x)));
        match trace.disturbances.get(k) {
            Some(v) => row.extend(v.iter().map(|x| num(*x))),
            None => row.extend(std::iter::repeat_n(String::new(), nv)),
        }
        row.push(num(trace.residuals[k]));
        row.push(opt_num(trace.errors_to_zbar.as_ref().map(|e| e[k])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))
}

fn csv_err(e: csv::Error) -> ExperimentError {
    ExperimentError::Io(std::io::Error::other(e))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> ExpResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| ExperimentError::Io(e.error))?;
    Ok(())
}

/// Files written by [`cmd_solve`].
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

/// Runs one experiment and writes `<name>.csv` and `<name>.summary.json`.
/// A failed or diverged run still writes its partial trace and is reported
/// as [`ExperimentError::Solver`] afterwards.
pub fn cmd_solve(cfg: &ExperimentConfig) -> ExpResult<SolveOutput> {
    let exp = cfg.resolve()?;
    let out = exp.run()?;
    let dir = cfg.out_dir();
    let name = cfg.base_name();
    let trace_path = dir.join(format!("{name}.csv"));
    let summary_path = dir.join(format!("{name}.summary.json"));
    write_atomic(&trace_path, &trace_csv(&out.trace)?)?;
    let json = serde_json::to_vec_pretty(&out.summary).map_err(|e| ExperimentError::Io(e.into()))?;
    write_atomic(&summary_path, &json)?;
    if out.summary.failed() {
        return Err(ExperimentError::Solver(format!(
            "run ended with {}{}; partial trace in {}",
            out.summary.termination.as_str(),
            out.summary
                .error
                .as_deref()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default(),
            trace_path.display()
        )));
    }
    Ok(SolveOutput {
        trace_path,
        summary_path,
        summary: out.summary,
    })
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: GridPoint,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

impl SweepRow {
    fn record(&self, label: &str, algorithm: &str) -> Vec<String> {
        let p = &self.point;
        let mut row = vec![
            label.to_string(),
            algorithm.to_string(),
            num(p.rho),
            num(p.delta),
            p.seed.to_string(),
        ];
        match &self.summary {
            Some(s) => {
                row.push(s.status.clone());
                row.push(s.termination.as_str().into());
                row.push(s.iterations.to_string());
                row.push(num(s.final_residual));
                row.push(opt_num(s.final_error));
                row.push(opt_num(s.asymptotic_error));
                row.push(opt_num(s.iss.map(|i| i.alpha)));
                row.push(opt_num(s.iss.map(|i| i.gamma)));
                row.push(s.iss.map(|i| i.feasible.to_string()).unwrap_or_default());
                row.push(opt_num(s.observed_rate));
            }
            None => {
                row.push("error".into());
                row.extend(std::iter::repeat_n(String::new(), SWEEP_HEADER.len() - 6));
            }
        }
        row
    }
}

/// Result of [`cmd_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Runs the cross product of the sweep axes in parallel and writes the rows,
/// sorted by `(rho, delta, seed)`, to `<name>.sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> ExpResult<SweepOutput> {
    let exp = cfg.resolve()?;
    let grid = cfg.grid()?;
    let workers = cfg.sweep.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start {workers} workers: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        grid.par_iter()
            .map(|p| match exp.run_with(p.disturbance, p.rho) {
                Ok(out) => SweepRow {
                    point: *p,
                    summary: Some(out.summary),
                    error: None,
                },
                Err(e) => SweepRow {
                    point: *p,
                    summary: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    if let Some(err) = rows.iter().find_map(|r| match &r.error {
        Some(e) if e.starts_with("config error") => Some(e.clone()),
        _ => None,
    }) {
        return Err(ExperimentError::Config(err));
    }
    let bytes = sweep_csv(&rows, &exp.label, exp.algorithm.name())?;
    let csv_path = cfg.out_dir().join(format!("{}.sweep.csv", cfg.base_name()));
    write_atomic(&csv_path, &bytes)?;
    Ok(SweepOutput { csv_path, rows })
}

pub fn sweep_csv(rows: &[SweepRow], label: &str, algorithm: &str) -> ExpResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record(label, algorithm)).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disturbance_spec_round_trip() {
        for s in [
            "zero",
            "constant:1e-3",
            "decaying:1e-2:0.5",
            "random:1e-3:seed=7",
            "random:0.01",
        ] {
            let spec: DisturbanceSpec = s.parse().unwrap();
            let again: DisturbanceSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again);
        }
        assert_eq!(
            "random:1e-3:seed=7".parse::<DisturbanceSpec>().unwrap(),
            DisturbanceSpec::Random { delta: 1e-3, seed: 7 }
        );
        for bad in ["", "random", "random:x", "constant:1:2", "decaying:1:2", "random:-1"] {
            assert!(bad.parse::<DisturbanceSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn unknown_algorithm_lists_names() {
        let err = "newtonn".parse::<Algorithm>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        for name in Algorithm::names() {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn incompatible_pairs_are_config_errors() {
        let cfg = ExperimentConfig::new("scalar-root", "sqp-bfgs");
        assert_eq!(cfg.resolve().unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::new("scalar-eq", "alm");
        cfg.target = Some("f".into());
        assert_eq!(cfg.resolve().unwrap_err().exit_code(), 2);
        let cfg = ExperimentConfig::new("scalar-root", "multistep");
        assert_eq!(cfg.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn grid_is_sorted_and_nonempty() {
        let mut cfg = ExperimentConfig::new("scalar-eq", "alm");
        assert!(cfg.grid().is_err());
        cfg.sweep.rho = Some(vec![10.0, 2.0]);
        cfg.sweep.seeds = Some(vec![3, 1]);
        let g = cfg.grid().unwrap();
        let keys: Vec<(f64, u64)> = g.iter().map(|p| (p.rho, p.seed)).collect();
        assert_eq!(keys, vec![(2.0, 1), (2.0, 3), (10.0, 1), (10.0, 3)]);
        cfg.sweep.rho = Some(vec![]);
        assert!(cfg.grid().is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let exp = ExperimentConfig::new("scalar-root", "newton").resolve().unwrap();
        let out = exp.run().unwrap();
        let text = String::from_utf8(trace_csv(&out.trace).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,z1,v1,residual,error_to_zbar");
        assert_eq!(lines.len(), out.trace.iterates.len() + 1);
        assert!(lines.last().unwrap().contains(",,"));
    }
}
