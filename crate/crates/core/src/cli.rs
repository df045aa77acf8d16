//! Command-line front end: `solve`, `sweep`, `probe`, `list-problems`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::experiment::{
    cmd_solve, cmd_sweep, write_atomic, Algorithm, ExperimentConfig, ExperimentError, InitialHessian, ProblemRef,
};
use crate::iss::{probe_solution_map, ProbeOptions};
use crate::registry;

#[derive(Debug, Parser)]
#[command(
    name = "iss-newton",
    version,
    about = "Newton-type methods for generalized equations under disturbances"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment; writes a trace CSV and a JSON summary.
    Solve(RunArgs),
    /// Run the cross product of the sweep axes; writes one aggregated CSV.
    Sweep(SweepArgs),
    /// Sample the solution map of a parametric problem around its base point.
    Probe(ProbeArgs),
    /// List registered problems and algorithms.
    ListProblems {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment file (TOML); flags below override its values.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Registered problem name or path to an inline problem file.
    #[arg(long, short)]
    pub problem: Option<String>,
    #[arg(long, short)]
    pub algorithm: Option<String>,
    /// zero | constant:C | decaying:C:RATE | random:DELTA[:seed=S]
    #[arg(long, short)]
    pub disturbance: Option<String>,
    /// f | data-g | data-grad-h
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Projected-gradient step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// heuristic | identity | start-hessian | solution-hessian
    #[arg(long)]
    pub b0: Option<String>,
    /// exact | newton:N | noise:SIGMA[:seed=S]
    #[arg(long)]
    pub inner: Option<String>,
    /// Cross-check every subproblem with the enumeration oracle.
    #[arg(long)]
    pub oracle: bool,
    /// Comma-separated start point (stacked (x, y) for programs).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub start: Option<Vec<f64>>,
    /// Output directory (default: $ISS_NEWTON_OUT_DIR, then ./iss-newton-out).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Base name of the output files.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Parametric problem: affine-probe or scalar-eq.
    #[arg(long, short)]
    pub problem: String,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Half-width of the sampling box around p̄₁ (and p̄₂ unless --radius2).
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
    #[arg(long)]
    pub radius2: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub slack: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl RunArgs {
    /// Loads the config file (if any) and applies the flag overrides.
    pub fn to_config(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let (Some(p), Some(a)) = (&self.problem, &self.algorithm) else {
                    return Err(ExperimentError::Config(
                        "either --config or both --problem and --algorithm are required".into(),
                    ));
                };
                ExperimentConfig::new(p, a)
            }
        };
        if let Some(p) = &self.problem {
            cfg.problem = ProblemRef::Name(p.clone());
        }
        if let Some(a) = &self.algorithm {
            cfg.algorithm = a.clone();
        }
        if let Some(d) = &self.disturbance {
            cfg.disturbance = d.clone();
        }
        if let Some(t) = &self.target {
            cfg.target = Some(t.clone());
        }
        if let Some(r) = self.rho {
            cfg.solver.rho = r;
        }
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
        if let Some(n) = self.max_iter {
            cfg.solver.max_iter = n;
        }
        if let Some(a) = self.alpha {
            cfg.solver.alpha = a;
        }
        if let Some(b) = &self.b0 {
            cfg.solver.b0 = match b.as_str() {
                "heuristic" => InitialHessian::Heuristic,
                "identity" => InitialHessian::Identity,
                "start-hessian" => InitialHessian::StartHessian,
                "solution-hessian" => InitialHessian::SolutionHessian,
                other => {
                    return Err(ExperimentError::Config(format!(
                        "unknown b0 '{other}'; valid: heuristic, identity, start-hessian, solution-hessian"
                    )))
                }
            };
        }
        if let Some(i) = &self.inner {
            cfg.solver.inner = i.clone();
        }
        if self.oracle {
            cfg.solver.enable_oracle = true;
        }
        if let Some(s) = &self.start {
            cfg.start = Some(s.clone());
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = Some(d.clone());
        }
        if let Some(n) = &self.name {
            cfg.output.name = Some(n.clone());
        }
        Ok(cfg)
    }
}

impl SweepArgs {
    pub fn to_config(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = self.run.to_config()?;
        if let Some(r) = &self.rho_grid {
            cfg.sweep.rho = Some(r.clone());
        }
        if let Some(d) = &self.delta_grid {
            cfg.sweep.delta = Some(d.clone());
        }
        if let Some(s) = &self.seeds {
            cfg.sweep.seeds = Some(s.clone());
        }
        if let Some(w) = self.workers {
            cfg.sweep.workers = Some(w);
        }
        Ok(cfg)
    }
}

fn list_problems(json: bool) -> String {
    if json {
        let v = serde_json::json!({
            "problems": registry::PROBLEMS,
            "parametric": registry::PARAMETRIC,
            "algorithms": Algorithm::names(),
        });
        return serde_json::to_string_pretty(&v).expect("static data serializes");
    }
    let mut out = String::from("problems:\n");
    for p in registry::PROBLEMS {
        out.push_str(&format!("  {:<18} {:<9} {}\n", p.name, p.kind, p.description));
    }
    out.push_str("parametric (probe):\n");
    for p in registry::PARAMETRIC {
        out.push_str(&format!("  {:<18} {}\n", p.name, p.description));
    }
    out.push_str(&format!("algorithms: {}\n", Algorithm::names().join(", ")));
    out
}

fn probe(args: &ProbeArgs) -> Result<String, ExperimentError> {
    let pp = registry::parametric(&args.problem).map_err(|e| ExperimentError::Config(e.to_string()))?;
    if args.samples == 0 || !(args.radius > 0.0) || args.radius2.is_some_and(|r| !(r > 0.0)) {
        return Err(ExperimentError::Config(
            "probe needs samples > 0 and positive radii".into(),
        ));
    }
    let opts = ProbeOptions {
        radii: (args.radius, args.radius2.unwrap_or(args.radius)),
        samples: args.samples,
        slack: args.slack,
        seed: args.seed,
        ..ProbeOptions::default()
    };
    let report = probe_solution_map(&pp.equation, &pp.pbar, &pp.x_start, &opts)
        .map_err(|e| ExperimentError::Solver(e.to_string()))?;
    let json = serde_json::json!({
        "problem": args.problem,
        "probe": report,
        "bound_holds": report.bound_holds(),
    });
    let text = serde_json::to_string_pretty(&json).map_err(|e| ExperimentError::Io(e.into()))?;
    let dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(crate::experiment::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(crate::experiment::DEFAULT_OUT_DIR));
    write_atomic(&dir.join(format!("{}.probe.json", args.problem)), text.as_bytes())?;
    Ok(text)
}

/// Parses `args` and runs the command; returns the process exit code
/// (0 success, 1 solver failure, 2 config error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::ListProblems { json } => Ok(list_problems(*json)),
        Command::Solve(a) => a.to_config().and_then(|cfg| cmd_solve(&cfg)).map(|out| {
            let s = &out.summary;
            format!(
                "{} {}: {} after {} iterations, residual {:e}\ntrace: {}\nsummary: {}\n",
                s.problem,
                s.algorithm,
                s.termination.as_str(),
                s.iterations,
                s.final_residual,
                out.trace_path.display(),
                out.summary_path.display()
            )
        }),
        Command::Sweep(a) => a.to_config().and_then(|cfg| cmd_sweep(&cfg)).map(|out| {
            let failed = out
                .rows
                .iter()
                .filter(|r| r.summary.as_ref().is_none_or(|s| s.failed()))
                .count();
            format!(
                "{} runs ({} failed)\nsweep: {}\n",
                out.rows.len(),
                failed,
                out.csv_path.display()
            )
        }),
        Command::Probe(a) => probe(a).map(|t| t + "\n"),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("iss-newton: {e}");
            e.exit_code()
        }
    }
}
