//! Generalized equations `f(z, v) + N_C(z) ∋ 0` and the perturbed
//! Josephy-Newton iteration
//!
//! ```text
//! f(z_k, v_k) + H(z_k, v_k)(z_{k+1} - z_k) + N_C(z_{k+1}) ∋ 0
//! ```
//!
//! with a pluggable choice of `H` ([`Linearization`]).

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{natural_residual, product_norm, BoxSet};
use crate::iss::DisturbanceSequence;
use crate::linalg;
use crate::subproblem::{
    pattern_inverse_norm, solution_pattern, solve_avi_enumerate, solve_avi_semismooth, MixedAvi, MAX_PATTERNS,
};

/// `(z, v) ↦ vector`.
pub type VecFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(z, v) ↦ matrix`.
pub type MatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Tolerance for the optional known solution (`‖r(z̄)‖ ≤ 1e-8`).
pub const SOLUTION_TOL: f64 = 1e-8;

/// The pair `(f, N_C)` with disturbance dimension `dim_v`.
#[derive(Clone)]
pub struct GeneralizedEquation {
    f: VecFn,
    jacobian: Option<MatFn>,
    set: BoxSet,
    dim_v: usize,
    zbar: Option<DVector<f64>>,
    split: Option<usize>,
}

impl fmt::Debug for GeneralizedEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralizedEquation")
            .field("dim_z", &self.dim_z())
            .field("dim_v", &self.dim_v)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("zbar", &self.zbar)
            .field("split", &self.split)
            .finish()
    }
}

impl GeneralizedEquation {
    pub fn new<F>(set: BoxSet, dim_v: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            jacobian: None,
            set,
            dim_v,
            zbar: None,
            split: None,
        }
    }

    /// `f(z, v) = f₀(z) + v`, the additive disturbance channel.
    pub fn additive<F>(set: BoxSet, f0: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let n = set.dim();
        Self::new(set, n, move |z, v| f0(z) + v)
    }

    /// Re-routes the disturbance to `f(z, v) = f(z, 0) + v` with `v ∈ ℝ^{dim z}`.
    pub fn additive_on_f(&self) -> Self {
        let (f, v0) = (self.f.clone(), self.zero_disturbance());
        let (jac, v1) = (self.jacobian.clone(), v0.clone());
        Self {
            f: Arc::new(move |z, v| f(z, &v0) + v),
            jacobian: jac.map(|j| -> MatFn { Arc::new(move |z, _| j(z, &v1)) }),
            set: self.set.clone(),
            dim_v: self.dim_z(),
            zbar: self.zbar.clone(),
            split: self.split,
        }
    }

    /// Jacobian of `f` with respect to `z`.
    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Attaches a known solution; fails when its natural residual exceeds
    /// [`SOLUTION_TOL`].
    pub fn with_solution(mut self, zbar: DVector<f64>) -> Result<Self> {
        check_dim(self.dim_z(), zbar.len(), "known solution")?;
        let r = self.residual_norm(&zbar)?;
        if r > SOLUTION_TOL {
            return Err(Error::InvalidParameter(format!(
                "claimed solution has natural residual {r:e}"
            )));
        }
        self.zbar = Some(zbar);
        Ok(self)
    }

    /// Marks `z = (x, y)` as a product with `x ∈ ℝ^split`; errors are then
    /// measured in `‖x‖ + ‖y‖`.
    pub fn with_split(mut self, split: usize) -> Self {
        self.split = Some(split);
        self
    }

    pub fn dim_z(&self) -> usize {
        self.set.dim()
    }

    pub fn dim_v(&self) -> usize {
        self.dim_v
    }

    pub fn set(&self) -> &BoxSet {
        &self.set
    }

    pub fn zbar(&self) -> Option<&DVector<f64>> {
        self.zbar.as_ref()
    }

    pub fn split(&self) -> Option<usize> {
        self.split
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn zero_disturbance(&self) -> DVector<f64> {
        DVector::zeros(self.dim_v)
    }

    pub fn eval(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim_z(), z.len(), "f argument z")?;
        check_dim(self.dim_v, v.len(), "f argument v")?;
        let out = (self.f)(z, v);
        check_dim(self.dim_z(), out.len(), "f output")?;
        Ok(out)
    }

    /// `∇_z f(z, v)`; central differences when no analytic Jacobian is set.
    pub fn jacobian(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim_z(), z.len(), "jacobian argument z")?;
        check_dim(self.dim_v, v.len(), "jacobian argument v")?;
        let n = self.dim_z();
        Ok(match &self.jacobian {
            Some(j) => j(z, v),
            None => linalg::fd_jacobian(|zz| (self.f)(zz, v), z, n),
        })
    }

    /// `‖z - P_C(z - f(z, 0))‖`.
    pub fn residual_norm(&self, z: &DVector<f64>) -> Result<f64> {
        let fz = self.eval(z, &self.zero_disturbance())?;
        Ok(natural_residual(z, &fz, &self.set)?.norm())
    }

    /// Error norm on `Z`, honouring the product split.
    pub fn norm(&self, z: &DVector<f64>) -> f64 {
        product_norm(z, self.split)
    }
}

/// Choice of the operator `H(z, v)` in the Newton step.
#[derive(Clone)]
pub enum Linearization {
    /// `H = ∇f(z, v)`.
    ExactGradient,
    /// `H = ∇f(z, 0) + V` with the disturbance read as an `n × n` matrix
    /// (column major) and `f` evaluated undisturbed.
    GradientPlusNoise,
    /// KKT systems `z = (x, y)`: the exact Jacobian, optionally with the
    /// upper-left `primal_dim × primal_dim` block replaced by `hessian`.
    SqpHessian {
        primal_dim: usize,
        hessian: Option<DMatrix<f64>>,
    },
    /// KKT systems: exact Jacobian with the upper-left block zeroed
    /// (sequential convexification).
    ZeroHessian {
        primal_dim: usize,
    },
    /// `H = α⁻¹ I` (projected gradient with step `α`).
    ScaledIdentity {
        alpha: f64,
    },
    Custom(MatFn),
}

impl fmt::Debug for Linearization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Linearization::ExactGradient => write!(f, "ExactGradient"),
            Linearization::GradientPlusNoise => write!(f, "GradientPlusNoise"),
            Linearization::SqpHessian { primal_dim, hessian } => f
                .debug_struct("SqpHessian")
                .field("primal_dim", primal_dim)
                .field("hessian", hessian)
                .finish(),
            Linearization::ZeroHessian { primal_dim } => {
                f.debug_struct("ZeroHessian").field("primal_dim", primal_dim).finish()
            }
            Linearization::ScaledIdentity { alpha } => f.debug_struct("ScaledIdentity").field("alpha", alpha).finish(),
            Linearization::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Linearization {
    /// Length of the disturbance vector a step consumes.
    pub fn disturbance_dim(&self, ge: &GeneralizedEquation) -> usize {
        match self {
            Linearization::GradientPlusNoise => ge.dim_z() * ge.dim_z(),
            _ => ge.dim_v(),
        }
    }

    fn validate(&self, ge: &GeneralizedEquation) -> Result<()> {
        match self {
            Linearization::ScaledIdentity { alpha } if !(*alpha > 0.0) => Err(Error::InvalidParameter(format!(
                "scaled identity needs alpha > 0, got {alpha}"
            ))),
            Linearization::SqpHessian { primal_dim, hessian } => {
                if *primal_dim > ge.dim_z() {
                    return Err(Error::InvalidParameter("primal dimension exceeds dim z".into()));
                }
                if let Some(b) = hessian {
                    check_dim(*primal_dim, b.nrows(), "SQP Hessian rows")?;
                    check_dim(*primal_dim, b.ncols(), "SQP Hessian cols")?;
                }
                Ok(())
            }
            Linearization::ZeroHessian { primal_dim } if *primal_dim > ge.dim_z() => {
                Err(Error::InvalidParameter("primal dimension exceeds dim z".into()))
            }
            _ => Ok(()),
        }
    }

    /// Returns `(f(z, v), H(z, v))` for this linearization.
    pub fn build(
        &self,
        ge: &GeneralizedEquation,
        z: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.validate(ge)?;
        let n = ge.dim_z();
        check_dim(self.disturbance_dim(ge), v.len(), "step disturbance")?;
        Ok(match self {
            Linearization::ExactGradient => (ge.eval(z, v)?, ge.jacobian(z, v)?),
            Linearization::GradientPlusNoise => {
                let v0 = ge.zero_disturbance();
                let h = ge.jacobian(z, &v0)? + linalg::square_from_vec(v, n);
                (ge.eval(z, &v0)?, h)
            }
            Linearization::SqpHessian { primal_dim, hessian } => {
                let mut h = ge.jacobian(z, v)?;
                if let Some(b) = hessian {
                    h.view_mut((0, 0), (*primal_dim, *primal_dim)).copy_from(b);
                }
                (ge.eval(z, v)?, h)
            }
            Linearization::ZeroHessian { primal_dim } => {
                let mut h = ge.jacobian(z, v)?;
                h.view_mut((0, 0), (*primal_dim, *primal_dim)).fill(0.0);
                (ge.eval(z, v)?, h)
            }
            Linearization::ScaledIdentity { alpha } => (ge.eval(z, v)?, DMatrix::identity(n, n) / *alpha),
            Linearization::Custom(hf) => {
                let h = hf(z, v);
                check_dim(n, h.nrows(), "custom H rows")?;
                check_dim(n, h.ncols(), "custom H cols")?;
                (ge.eval(z, v)?, h)
            }
        })
    }
}

/// Inner-solver settings for one Newton step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Relative tolerance of the subproblem's natural residual.
    pub subproblem_rtol: f64,
    pub subproblem_max_iter: usize,
    /// Run the enumeration oracle and fail on multiple subproblem solutions.
    pub enable_oracle: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            subproblem_rtol: 1e-13,
            subproblem_max_iter: 100,
            enable_oracle: false,
        }
    }
}

/// Subproblem `a + M z + N_C(z) ∋ 0` of the Newton step at `z_k`:
/// `a = f(z_k, v_k) - H z_k`, `M = H`.
pub fn newton_subproblem(
    ge: &GeneralizedEquation,
    lin: &Linearization,
    z_k: &DVector<f64>,
    v_k: &DVector<f64>,
) -> Result<MixedAvi> {
    check_dim(ge.dim_z(), z_k.len(), "newton step iterate")?;
    let (fz, h) = lin.build(ge, z_k, v_k)?;
    let a = fz - &h * z_k;
    MixedAvi::new(a, h, ge.set().clone())
}

/// Solves a Newton subproblem warm-started at `z_start`, optionally
/// cross-checking uniqueness with the enumeration oracle.
///
/// When semismooth Newton meets a singular generalized Jacobian or stalls
/// (typical for linear-programming subproblems, where `M` is singular on
/// most faces) and the box is small enough, the subproblem is solved by
/// enumeration instead; a unique candidate is accepted.
pub fn solve_subproblem(avi: &MixedAvi, z_start: &DVector<f64>, opts: &StepOptions) -> Result<DVector<f64>> {
    if !z_start.iter().all(|x| x.is_finite()) || !avi.a.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("Newton subproblem"));
    }
    let scale = 1.0 + avi.a.amax() + avi.m.amax() * (1.0 + z_start.amax());
    let z = match solve_avi_semismooth(avi, z_start, opts.subproblem_rtol * scale, opts.subproblem_max_iter) {
        Ok(z) => z,
        Err(err @ (Error::SingularPattern { .. } | Error::MaxIterExceeded { .. }))
            if crate::subproblem::pattern_count(&avi.set) <= MAX_PATTERNS =>
        {
            let e = solve_avi_enumerate(avi)?;
            match e.solutions.len() {
                1 => e.solutions[0].clone(),
                0 => return Err(err),
                count => return Err(Error::NonUnique { count }),
            }
        }
        Err(err) => return Err(err),
    };
    if opts.enable_oracle && crate::subproblem::pattern_count(&avi.set) <= MAX_PATTERNS {
        let e = solve_avi_enumerate(avi)?;
        if e.solutions.len() > 1 {
            return Err(Error::NonUnique {
                count: e.solutions.len(),
            });
        }
    }
    Ok(z)
}

/// One step of the perturbed Josephy-Newton iteration.
pub fn josephy_newton_step(
    ge: &GeneralizedEquation,
    lin: &Linearization,
    z_k: &DVector<f64>,
    v_k: &DVector<f64>,
) -> Result<DVector<f64>> {
    josephy_newton_step_with(ge, lin, z_k, v_k, &StepOptions::default())
}

pub fn josephy_newton_step_with(
    ge: &GeneralizedEquation,
    lin: &Linearization,
    z_k: &DVector<f64>,
    v_k: &DVector<f64>,
    opts: &StepOptions,
) -> Result<DVector<f64>> {
    let avi = newton_subproblem(ge, lin, z_k, v_k)?;
    solve_subproblem(&avi, z_k, opts)
}

/// Newton step with a matrix-valued disturbance on the gradient:
/// `f(z_k) + (∇f(z_k) + V_k)(z_{k+1} - z_k) + N_C(z_{k+1}) ∋ 0`.
pub fn gradient_perturbed_step(
    ge: &GeneralizedEquation,
    z_k: &DVector<f64>,
    v_k: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = ge.dim_z();
    check_dim(n, v_k.nrows(), "gradient disturbance rows")?;
    check_dim(n, v_k.ncols(), "gradient disturbance cols")?;
    let flat = DVector::from_column_slice(v_k.as_slice());
    josephy_newton_step(ge, &Linearization::GradientPlusNoise, z_k, &flat)
}

/// Why an iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Diverged,
    StepFailed,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::Diverged => "diverged",
            Termination::StepFailed => "step-failed",
        }
    }
}

/// Outcome of one attempted step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepStatus {
    Ok,
    Failed(Error),
}

/// Record of an iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub iterates: Vec<DVector<f64>>,
    /// `disturbances[k]` was applied in the step from `iterates[k]`.
    pub disturbances: Vec<DVector<f64>>,
    /// Undisturbed natural-residual norm at every iterate.
    pub residuals: Vec<f64>,
    pub step_status: Vec<StepStatus>,
    /// `‖z_k - z̄‖` at every iterate when a solution is known.
    pub errors_to_zbar: Option<Vec<f64>>,
    /// Regularity of each accepted step's subproblem: `‖(M_II)⁻¹‖` on the
    /// inactive set of the new iterate.
    pub step_kappas: Vec<f64>,
    pub step_times: Vec<Duration>,
    /// Product split `z = (x, y)`, `x ∈ ℝ^split`.
    pub split: Option<usize>,
    pub termination: Termination,
}

impl Trace {
    pub fn new(z0: DVector<f64>, residual0: f64, split: Option<usize>) -> Self {
        Self {
            iterates: vec![z0],
            disturbances: Vec::new(),
            residuals: vec![residual0],
            step_status: Vec::new(),
            errors_to_zbar: None,
            step_kappas: Vec::new(),
            step_times: Vec::new(),
            split,
            termination: Termination::MaxIterations,
        }
    }

    pub fn steps(&self) -> usize {
        self.disturbances.len()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("trace has at least one iterate")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("trace has at least one residual")
    }

    pub fn disturbance_norms(&self) -> Vec<f64> {
        self.disturbances.iter().map(|v| v.norm()).collect()
    }

    /// `‖z_k - z̄‖` in the trace's product norm.
    pub fn errors(&self, zbar: &DVector<f64>) -> Vec<f64> {
        self.iterates
            .iter()
            .map(|z| product_norm(&(z - zbar), self.split))
            .collect()
    }

    pub fn set_reference(&mut self, zbar: &DVector<f64>) {
        self.errors_to_zbar = Some(self.errors(zbar));
    }

    pub fn failed_step(&self) -> Option<&Error> {
        self.step_status.iter().find_map(|s| match s {
            StepStatus::Failed(e) => Some(e),
            StepStatus::Ok => None,
        })
    }
}

/// Settings of [`run_newton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub enable_oracle: bool,
    /// Stop when `‖z_k‖` exceeds this bound.
    pub divergence_bound: f64,
    pub step: StepOptions,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            enable_oracle: false,
            divergence_bound: 1e6,
            step: StepOptions::default(),
        }
    }
}

/// Iterates the Josephy-Newton step with `v_k` drawn from `dist` until the
/// undisturbed natural residual and the step length both drop to `tol`,
/// `max_iter` steps were taken, the iterate diverges or a step fails.
pub fn run_newton(
    ge: &GeneralizedEquation,
    lin: &Linearization,
    z0: &DVector<f64>,
    dist: &DisturbanceSequence,
    cfg: &NewtonConfig,
) -> Result<Trace> {
    check_dim(ge.dim_z(), z0.len(), "initial iterate")?;
    if z0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial iterate"));
    }
    lin.validate(ge)?;
    let mut stream = dist.stream(lin.disturbance_dim(ge))?;
    let opts = StepOptions {
        enable_oracle: cfg.enable_oracle,
        ..cfg.step
    };
    let mut trace = Trace::new(z0.clone(), ge.residual_norm(z0)?, ge.split());
    trace.termination = if trace.final_residual() <= cfg.tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    let mut z = z0.clone();
    for _ in 0..cfg.max_iter {
        if trace.termination == Termination::Converged {
            break;
        }
        let v = stream.next_disturbance();
        let started = Instant::now();
        let step = newton_subproblem(ge, lin, &z, &v).and_then(|avi| {
            let next = solve_subproblem(&avi, &z, &opts)?;
            let kappa = pattern_inverse_norm(&avi.m, &solution_pattern(&avi, &next, 1e-9));
            Ok((next, kappa))
        });
        match step {
            Ok((next, kappa)) => {
                let res = ge.residual_norm(&next)?;
                trace.step_times.push(started.elapsed());
                trace.step_status.push(StepStatus::Ok);
                trace.disturbances.push(v);
                trace.step_kappas.push(kappa);
                trace.residuals.push(res);
                trace.iterates.push(next.clone());
                let step_len = (&next - &z).norm();
                z = next;
                if !z.iter().all(|x| x.is_finite()) || z.norm() > cfg.divergence_bound {
                    trace.termination = Termination::Diverged;
                    break;
                }
                if res <= cfg.tol && step_len <= cfg.tol {
                    trace.termination = Termination::Converged;
                }
            }
            Err(e) => {
                trace.step_status.push(StepStatus::Failed(e));
                trace.termination = Termination::StepFailed;
                break;
            }
        }
    }
    if let Some(zbar) = ge.zbar() {
        trace.set_reference(zbar);
    }
    Ok(trace)
}
