//! Multistep Newton-type method for `f(x, y, v) + N_C(x, y) ∋ 0`:
//!
//! ```text
//! f̃(x_{k+1}, y_k, v_k) + N_C̃(x_{k+1}) ∋ 0                               (inner)
//! f(x_{k+1}, y_k, v_k) + H_y(x_{k+1}, y_k, v_k)(y_{k+1} - y_k)
//!     + N_C(x_{k+1}, y_{k+1}) ∋ 0                                        (outer)
//! ```
//!
//! Only the partial operator `H_y` enters the computation. The inner equation
//! may be solved inexactly; its error is appended to the recorded disturbance
//! so that the ISS estimators see it.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::geneq::{
    run_newton, solve_subproblem, GeneralizedEquation, Linearization, NewtonConfig, StepOptions, StepStatus,
    Termination, Trace,
};
use crate::geometry::{natural_residual, BoxSet};
use crate::iss::DisturbanceSequence;

/// `(x, y, v) ↦ vector`.
pub type XyVecFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `(x, y, v) ↦ matrix`.
pub type XyMatFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A two-block generalized equation with its inner equation and partial
/// operator `H_y`.
#[derive(Clone)]
pub struct MultistepProblem {
    nx: usize,
    ny: usize,
    dim_v: usize,
    f: XyVecFn,
    set: BoxSet,
    f_tilde: XyVecFn,
    f_tilde_jac: Option<XyMatFn>,
    set_tilde: BoxSet,
    h_y: XyMatFn,
    solution: Option<(DVector<f64>, DVector<f64>)>,
}

impl std::fmt::Debug for MultistepProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultistepProblem")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("dim_v", &self.dim_v)
            .field("solution", &self.solution)
            .finish()
    }
}

impl MultistepProblem {
    /// `f` maps into `ℝ^{nx+ny}` with cone `N_set`; `f_tilde` maps into `ℝ^{nx}`
    /// with cone `N_{set_tilde}`; `h_y(ξ, η, v)` is `(nx+ny) × ny`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nx: usize,
        ny: usize,
        dim_v: usize,
        set: BoxSet,
        f: XyVecFn,
        set_tilde: BoxSet,
        f_tilde: XyVecFn,
        h_y: XyMatFn,
    ) -> Result<Self> {
        check_dim(nx + ny, set.dim(), "multistep outer box")?;
        check_dim(nx, set_tilde.dim(), "multistep inner box")?;
        Ok(Self {
            nx,
            ny,
            dim_v,
            f,
            set,
            f_tilde,
            f_tilde_jac: None,
            set_tilde,
            h_y,
            solution: None,
        })
    }

    /// Jacobian of `f̃` with respect to `x`.
    pub fn with_inner_jacobian(mut self, jac: XyMatFn) -> Self {
        self.f_tilde_jac = Some(jac);
        self
    }

    /// Attaches `(x̄, ȳ)`; fails when it does not solve the outer equation to
    /// `1e-8`.
    pub fn with_solution(mut self, xbar: DVector<f64>, ybar: DVector<f64>) -> Result<Self> {
        check_dim(self.nx, xbar.len(), "multistep x̄")?;
        check_dim(self.ny, ybar.len(), "multistep ȳ")?;
        let r = self.residual_norm(&xbar, &ybar)?;
        if r > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "claimed solution has natural residual {r:e}"
            )));
        }
        self.solution = Some((xbar, ybar));
        Ok(self)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dim_v(&self) -> usize {
        self.dim_v
    }

    pub fn solution(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.solution.as_ref()
    }

    pub fn stack(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.nx + self.ny);
        z.rows_mut(0, self.nx).copy_from(x);
        z.rows_mut(self.nx, self.ny).copy_from(y);
        z
    }

    pub fn unstack(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, self.nx).into_owned(), z.rows(self.nx, self.ny).into_owned())
    }

    /// Undisturbed natural residual of the outer equation.
    pub fn residual_norm(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let v0 = DVector::zeros(self.dim_v);
        let fz = (self.f)(x, y, &v0);
        check_dim(self.nx + self.ny, fz.len(), "multistep f output")?;
        Ok(natural_residual(&self.stack(x, y), &fz, &self.set)?.norm())
    }

    /// Inner equation in `x` with `(y, v)` frozen.
    pub fn inner_equation(&self, y: &DVector<f64>, v: &DVector<f64>) -> GeneralizedEquation {
        let ft = self.f_tilde.clone();
        let (yf, vf) = (y.clone(), v.clone());
        let ge = GeneralizedEquation::new(self.set_tilde.clone(), 0, move |x, _| ft(x, &yf, &vf));
        match &self.f_tilde_jac {
            Some(j) => {
                let j = j.clone();
                let (yj, vj) = (y.clone(), v.clone());
                ge.with_jacobian(move |x, _| j(x, &yj, &vj))
            }
            None => ge,
        }
    }
}

/// How accurately the inner equation is solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerMode {
    Exact,
    /// A fixed number of Josephy-Newton steps from the previous `x`.
    NewtonSteps(usize),
    /// Exact solution plus seeded uniform noise of norm at most `sigma`,
    /// projected back onto the inner box.
    Noise {
        sigma: f64,
        seed: u64,
    },
}

/// Settings of [`run_multistep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultistepConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub inner: InnerMode,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub divergence_bound: f64,
    pub step: StepOptions,
}

impl Default for MultistepConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
            inner: InnerMode::Exact,
            inner_tol: 1e-10,
            inner_max_iter: 50,
            divergence_bound: 1e6,
            step: StepOptions::default(),
        }
    }
}

/// Inner iterate and its distance to the exact inner solution.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub x: DVector<f64>,
    pub inexactness: f64,
}

fn exact_inner(ge: &GeneralizedEquation, x_start: &DVector<f64>, cfg: &MultistepConfig) -> Result<DVector<f64>> {
    let ncfg = NewtonConfig {
        tol: cfg.inner_tol,
        max_iter: cfg.inner_max_iter,
        divergence_bound: cfg.divergence_bound,
        step: cfg.step,
        ..NewtonConfig::default()
    };
    // one unconditional step, so a start already inside the tolerance is
    // still refined to the accuracy of the linearization
    let v0 = ge.zero_disturbance();
    let first = crate::geneq::josephy_newton_step_with(ge, &Linearization::ExactGradient, x_start, &v0, &cfg.step)?;
    let trace = run_newton(
        ge,
        &Linearization::ExactGradient,
        &first,
        &DisturbanceSequence::zero(),
        &ncfg,
    )?;
    match trace.termination {
        Termination::Converged => Ok(trace.last().clone()),
        Termination::Diverged => Err(Error::Diverged {
            norm: trace.last().norm(),
        }),
        _ => Err(trace.failed_step().cloned().unwrap_or(Error::MaxIterExceeded {
            iterations: trace.steps(),
            residual: trace.final_residual(),
        })),
    }
}

/// Solves the inner equation for `x_{k+1}` starting from `x_start` (the
/// previous `x`, which selects the nearby solution when several exist).
/// `step` indexes the noise stream in [`InnerMode::Noise`].
pub fn inner_solve(
    mp: &MultistepProblem,
    x_start: &DVector<f64>,
    y_k: &DVector<f64>,
    v_k: &DVector<f64>,
    step: usize,
    cfg: &MultistepConfig,
) -> Result<InnerSolution> {
    check_dim(mp.nx, x_start.len(), "inner start")?;
    check_dim(mp.ny, y_k.len(), "inner y")?;
    check_dim(mp.dim_v, v_k.len(), "inner v")?;
    if !y_k.iter().chain(v_k.iter()).all(|a| a.is_finite()) {
        return Err(Error::NonFinite("inner solve parameters"));
    }
    let ge = mp.inner_equation(y_k, v_k);
    let exact = exact_inner(&ge, x_start, cfg)?;
    match cfg.inner {
        InnerMode::Exact => Ok(InnerSolution {
            x: exact,
            inexactness: 0.0,
        }),
        InnerMode::NewtonSteps(n) => {
            let mut x = x_start.clone();
            let v0 = ge.zero_disturbance();
            for _ in 0..n {
                x = crate::geneq::josephy_newton_step_with(&ge, &Linearization::ExactGradient, &x, &v0, &cfg.step)?;
            }
            let inexactness = (&x - &exact).norm();
            Ok(InnerSolution { x, inexactness })
        }
        InnerMode::Noise { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(step as u64));
            let scale = if mp.nx == 0 { 0.0 } else { sigma / (mp.nx as f64).sqrt() };
            let noise = DVector::from_fn(mp.nx, |_, _| scale * rng.random_range(-1.0..=1.0));
            let x = mp.set_tilde.project(&(&exact + noise))?;
            let inexactness = (&x - &exact).norm();
            Ok(InnerSolution { x, inexactness })
        }
    }
}

/// Result of the outer (partial Newton) step.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub y: DVector<f64>,
    /// Natural residual of the `x`-rows of the outer inclusion at
    /// `(x_{k+1}, y_{k+1})`; zero when the inner and outer equations are
    /// consistent.
    pub x_block_residual: f64,
}

/// Solves the outer inclusion for `y_{k+1}` with `x_{k+1}` fixed: the `y`-rows
/// form the affine subproblem
/// `f_y + H_y^{(y)}(y - y_k) + N_{C_y}(y) ∋ 0`.
pub fn outer_step(
    mp: &MultistepProblem,
    x_next: &DVector<f64>,
    y_k: &DVector<f64>,
    v_k: &DVector<f64>,
    opts: &StepOptions,
) -> Result<OuterStep> {
    check_dim(mp.nx, x_next.len(), "outer x")?;
    check_dim(mp.ny, y_k.len(), "outer y")?;
    check_dim(mp.dim_v, v_k.len(), "outer v")?;
    let (nx, ny) = (mp.nx, mp.ny);
    let f0 = (mp.f)(x_next, y_k, v_k);
    let hy = (mp.h_y)(x_next, y_k, v_k);
    check_dim(nx + ny, f0.len(), "outer f output")?;
    check_dim(nx + ny, hy.nrows(), "H_y rows")?;
    check_dim(ny, hy.ncols(), "H_y cols")?;
    let m_yy = hy.rows(nx, ny).into_owned();
    let a = f0.rows(nx, ny) - &m_yy * y_k;
    let avi = crate::subproblem::MixedAvi::new(a, m_yy, mp.set.slice(nx..nx + ny))?;
    let y = solve_subproblem(&avi, y_k, opts)?;
    let fx = f0.rows(0, nx) + hy.rows(0, nx) * (&y - y_k);
    let x_block_residual = natural_residual(x_next, &fx, &mp.set.slice(0..nx))?.norm();
    Ok(OuterStep { y, x_block_residual })
}

/// Trace of a multistep run plus per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistepRun {
    /// Iterates are stacked `(x, y)` with split `nx`; each recorded
    /// disturbance is `(v_k, inner inexactness)`.
    pub trace: Trace,
    pub inner_inexactness: Vec<f64>,
    pub x_block_residuals: Vec<f64>,
}

impl MultistepRun {
    /// The applied `v_k` (without the inexactness component).
    pub fn applied_disturbance(&self, k: usize) -> DVector<f64> {
        let d = &self.trace.disturbances[k];
        d.rows(0, d.len() - 1).into_owned()
    }
}

/// Alternates [`inner_solve`] and [`outer_step`].
pub fn run_multistep(
    mp: &MultistepProblem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    dist: &DisturbanceSequence,
    cfg: &MultistepConfig,
) -> Result<MultistepRun> {
    check_dim(mp.nx, x0.len(), "multistep x0")?;
    check_dim(mp.ny, y0.len(), "multistep y0")?;
    if !x0.iter().chain(y0.iter()).all(|a| a.is_finite()) {
        return Err(Error::NonFinite("multistep start"));
    }
    let mut stream = dist.stream(mp.dim_v)?;
    let mut trace = Trace::new(mp.stack(x0, y0), mp.residual_norm(x0, y0)?, Some(mp.nx));
    let mut run_inexact = Vec::new();
    let mut x_res = Vec::new();
    let (mut x, mut y) = (x0.clone(), y0.clone());
    trace.termination = if trace.final_residual() <= cfg.tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    for k in 0..cfg.max_iter {
        if trace.termination == Termination::Converged {
            break;
        }
        let v = stream.next_disturbance();
        let started = Instant::now();
        let step = inner_solve(mp, &x, &y, &v, k, cfg)
            .and_then(|inner| outer_step(mp, &inner.x, &y, &v, &cfg.step).map(|outer| (inner, outer)));
        match step {
            Ok((inner, outer)) => {
                let step_len = (&inner.x - &x).norm() + (&outer.y - &y).norm();
                x = inner.x;
                y = outer.y;
                let z = mp.stack(&x, &y);
                let res = mp.residual_norm(&x, &y)?;
                let mut recorded = DVector::zeros(mp.dim_v + 1);
                recorded.rows_mut(0, mp.dim_v).copy_from(&v);
                recorded[mp.dim_v] = inner.inexactness;
                trace.step_times.push(started.elapsed());
                trace.step_status.push(StepStatus::Ok);
                trace.disturbances.push(recorded);
                trace.residuals.push(res);
                trace.iterates.push(z.clone());
                run_inexact.push(inner.inexactness);
                x_res.push(outer.x_block_residual);
                if !z.iter().all(|a| a.is_finite()) || z.norm() > cfg.divergence_bound {
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
    if let Some((xbar, ybar)) = &mp.solution {
        trace.set_reference(&mp.stack(xbar, ybar));
    }
    Ok(MultistepRun {
        trace,
        inner_inexactness: run_inexact,
        x_block_residuals: x_res,
    })
}

/// `‖x_k - x̄‖` and `‖y_k - ȳ‖` along a run.
pub fn block_errors(run: &MultistepRun, xbar: &DVector<f64>, ybar: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let nx = xbar.len();
    run.trace
        .iterates
        .iter()
        .map(|z| ((z.rows(0, nx) - xbar).norm(), (z.rows(nx, ybar.len()) - ybar).norm()))
        .unzip()
}

/// Smallest constant `c` with `‖x_{k+1} - x̄‖ ≤ c (‖y_k - ȳ‖ + ‖v_k‖)` along
/// the run (calmness of the inner solution map).
pub fn fit_x_calmness(run: &MultistepRun, xbar: &DVector<f64>, ybar: &DVector<f64>) -> f64 {
    let (ex, ey) = block_errors(run, xbar, ybar);
    let vn = run.trace.disturbance_norms();
    (0..vn.len())
        .filter_map(|k| {
            let denom = ey[k] + vn[k];
            (denom > 0.0).then(|| ex[k + 1] / denom)
        })
        .fold(0.0, f64::max)
}

/// Checks `‖(x_k, y_k) - (x̄, ȳ)‖ ≤ α_k e_0 + γ_∞ ‖v‖∞` with
/// `α_k = a_y^{k-1}(a_y + a_w)` for `k ≥ 1`.
pub fn combined_bound_holds(errors: &[f64], a_y: f64, a_w: f64, gamma_inf: f64, sup_norm: f64) -> bool {
    let Some(&e0) = errors.first() else {
        return true;
    };
    errors.iter().enumerate().skip(1).all(|(k, &ek)| {
        let alpha_k = a_y.powi(k as i32 - 1) * (a_y + a_w);
        ek <= (alpha_k * e0 + gamma_inf * sup_norm) * (1.0 + 1e-9) + 1e-14
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// `f = (x + y, x - y)` with inner equation `x + y = 0` in `x`.
    fn linear_pair() -> MultistepProblem {
        let f: XyVecFn = Arc::new(|x, y, v| v_from(&[x[0] + y[0] + v[0], x[0] - y[0]]));
        let ft: XyVecFn = Arc::new(|x, y, v| v_from(&[x[0] + y[0] + v[0]]));
        let hy: XyMatFn = Arc::new(|_, _, _| DMatrix::from_column_slice(2, 1, &[1.0, -1.0]));
        MultistepProblem::new(1, 1, 1, BoxSet::free(2), f, BoxSet::free(1), ft, hy)
            .unwrap()
            .with_solution(v(&[0.0]), v(&[0.0]))
            .unwrap()
    }

    fn v_from(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn outer_step_hand_solved() {
        let mp = linear_pair();
        // y-row: (x - y_k) - (y - y_k) = 0  =>  y = x
        let out = outer_step(&mp, &v(&[0.3]), &v(&[0.7]), &v(&[0.0]), &StepOptions::default()).unwrap();
        assert!((out.y[0] - 0.3).abs() < 1e-14);
        // x-row: 0.3 + 0.7 + (0.3 - 0.7) = 0.6 is not consistent
        assert!((out.x_block_residual - 0.6).abs() < 1e-14);
    }

    #[test]
    fn stationary_at_solution() {
        let mp = linear_pair();
        let cfg = MultistepConfig::default();
        let inner = inner_solve(&mp, &v(&[0.0]), &v(&[0.0]), &v(&[0.0]), 0, &cfg).unwrap();
        assert_eq!(inner.x, v(&[0.0]));
        let out = outer_step(&mp, &inner.x, &v(&[0.0]), &v(&[0.0]), &cfg.step).unwrap();
        assert_eq!(out.y, v(&[0.0]));
        let run = run_multistep(&mp, &v(&[0.0]), &v(&[0.0]), &DisturbanceSequence::zero(), &cfg).unwrap();
        assert_eq!(run.trace.termination, Termination::Converged);
        assert_eq!(run.trace.iterates.len(), 1);
    }

    #[test]
    fn linear_pair_oscillates() {
        // inner: x = -y_k; outer: y = x, so y_{k+1} = -y_k (contraction factor 1)
        let mp = linear_pair();
        let cfg = MultistepConfig {
            max_iter: 4,
            ..MultistepConfig::default()
        };
        let run = run_multistep(&mp, &v(&[0.0]), &v(&[0.5]), &DisturbanceSequence::zero(), &cfg).unwrap();
        let ys: Vec<f64> = run.trace.iterates.iter().map(|z| z[1]).collect();
        for (k, y) in ys.iter().enumerate() {
            let expect = if k % 2 == 0 { 0.5 } else { -0.5 };
            assert!((y - expect).abs() < 1e-9, "k = {k}: {y}");
        }
    }

    #[test]
    fn newton_steps_mode_records_inexactness() {
        // inner x³ + x - y = 0 solved by one Newton step
        let f: XyVecFn = Arc::new(|x, y, _| v_from(&[x[0].powi(3) + x[0] - y[0], x[0] - y[0]]));
        let ft: XyVecFn = Arc::new(|x, y, _| v_from(&[x[0].powi(3) + x[0] - y[0]]));
        let hy: XyMatFn = Arc::new(|_, _, _| DMatrix::from_column_slice(2, 1, &[-1.0, -1.0]));
        let mp = MultistepProblem::new(1, 1, 0, BoxSet::free(2), f, BoxSet::free(1), ft, hy).unwrap();
        let exact_cfg = MultistepConfig::default();
        let one = MultistepConfig {
            inner: InnerMode::NewtonSteps(1),
            ..exact_cfg
        };
        let y = v(&[2.0]);
        let exact = inner_solve(&mp, &v(&[1.1]), &y, &DVector::zeros(0), 0, &exact_cfg).unwrap();
        assert!((exact.x[0] - 1.0).abs() < 1e-10);
        let inexact = inner_solve(&mp, &v(&[1.1]), &y, &DVector::zeros(0), 0, &one).unwrap();
        // one Newton step from 1.1: 1.1 - (1.331 + 1.1 - 2)/(3.63 + 1)
        let hand = 1.1 - 0.431 / 4.63;
        assert!((inexact.x[0] - hand).abs() < 1e-8);
        assert!((inexact.inexactness - (hand - exact.x[0]).abs()).abs() < 1e-8);
    }

    #[test]
    fn combined_bound_check() {
        let e = [1.0, 0.5, 0.25, 0.125];
        assert!(combined_bound_holds(&e, 0.5, 0.0, 0.0, 0.0));
        assert!(!combined_bound_holds(&e, 0.4, 0.0, 0.0, 0.0));
    }
}
