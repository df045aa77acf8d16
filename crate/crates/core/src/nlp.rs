//! Equality-constrained nonlinear programs over a box,
//!
//! ```text
//! min_{x ∈ C} h(x, v)   subject to   g(x, v) = 0,
//! ```
//!
//! their KKT generalized equation and the algorithm instances built on the
//! Josephy-Newton step: SQP (exact and Broyden-class), sequential
//! convexification, projected gradient descent and the augmented Lagrangian
//! method.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::geneq::{
    run_newton, solve_subproblem, GeneralizedEquation, Linearization, NewtonConfig, StepOptions, StepStatus,
    Termination, Trace,
};
use crate::geometry::{natural_residual, BoxSet};
use crate::iss::DisturbanceSequence;
use crate::linalg;
use crate::multistep::{
    inner_solve, run_multistep, InnerMode, MultistepConfig, MultistepProblem, MultistepRun, XyMatFn, XyVecFn,
};
use crate::subproblem::MixedAvi;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type VecFn = crate::geneq::VecFn;
pub type MatFn = crate::geneq::MatFn;
/// `(x, y, v) ↦ ∇²ₓₓ L(x, y, v)`.
pub type HessFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Threshold on the smallest singular value of `∇g` for LICQ.
pub const LICQ_TOL: f64 = 1e-8;

/// Where a disturbance enters the problem data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// `g(x, v) = g(x) + v`, `v ∈ ℝ^m`.
    AdditiveOnG,
    /// `∇h(x, v) = ∇h(x) + v` (and `h(x, v) = h(x) + ⟨v, x⟩`), `v ∈ ℝ^n`.
    AdditiveOnGradH,
}

#[derive(Clone)]
pub struct NlpProblem {
    n: usize,
    m: usize,
    dim_v: usize,
    h: ScalarFn,
    grad_h: VecFn,
    g: VecFn,
    jac_g: MatFn,
    hess_l: Option<HessFn>,
    set: BoxSet,
    solution: Option<(DVector<f64>, DVector<f64>)>,
}

impl std::fmt::Debug for NlpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NlpProblem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("dim_v", &self.dim_v)
            .field("set", &self.set)
            .field("solution", &self.solution)
            .finish()
    }
}

impl NlpProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        dim_v: usize,
        set: BoxSet,
        h: ScalarFn,
        grad_h: VecFn,
        g: VecFn,
        jac_g: MatFn,
    ) -> Result<Self> {
        check_dim(n, set.dim(), "NLP box")?;
        Ok(Self {
            n,
            m,
            dim_v,
            h,
            grad_h,
            g,
            jac_g,
            hess_l: None,
            set,
            solution: None,
        })
    }

    pub fn with_hessian(mut self, hess_l: HessFn) -> Self {
        self.hess_l = Some(hess_l);
        self
    }

    /// Attaches `(x̄, ȳ)` after checking the KKT residual (≤ 1e-8) and LICQ.
    pub fn with_solution(mut self, xbar: DVector<f64>, ybar: DVector<f64>) -> Result<Self> {
        let kkt = assemble_kkt(&self, &xbar, &ybar, &DVector::zeros(self.dim_v))?;
        if kkt.natural_residual > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "claimed KKT point has residual {:e}",
                kkt.natural_residual
            )));
        }
        let licq = licq_check(&self, &xbar);
        if !licq.holds {
            return Err(Error::InvalidParameter(format!(
                "LICQ fails at the claimed solution (sigma_min = {:e})",
                licq.sigma_min
            )));
        }
        self.solution = Some((xbar, ybar));
        Ok(self)
    }

    /// Re-wires the disturbance channel; the previous channel is fed zeros.
    pub fn with_perturbation(self, shape: Perturbation) -> Self {
        let base_v = DVector::zeros(self.dim_v);
        let (h0, gh0, g0, jg0) = (self.h.clone(), self.grad_h.clone(), self.g.clone(), self.jac_g.clone());
        let hess0 = self.hess_l.clone();
        let (bv1, bv2, bv3, bv4, bv5) = (base_v.clone(), base_v.clone(), base_v.clone(), base_v.clone(), base_v);
        let (h, grad_h, g, dim_v): (ScalarFn, VecFn, VecFn, usize) = match shape {
            Perturbation::AdditiveOnG => (
                Arc::new(move |x, _| h0(x, &bv1)),
                Arc::new(move |x, _| gh0(x, &bv2)),
                Arc::new(move |x, v| g0(x, &bv3) + v),
                self.m,
            ),
            Perturbation::AdditiveOnGradH => (
                Arc::new(move |x, v| h0(x, &bv1) + v.dot(x)),
                Arc::new(move |x, v| gh0(x, &bv2) + v),
                Arc::new(move |x, _| g0(x, &bv3)),
                self.n,
            ),
        };
        let jac_g: MatFn = Arc::new(move |x, _| jg0(x, &bv4));
        let hess_l: Option<HessFn> = hess0.map(|hf| -> HessFn { Arc::new(move |x, y, _| hf(x, y, &bv5)) });
        Self {
            h,
            grad_h,
            g,
            jac_g,
            hess_l,
            dim_v,
            ..self
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim_v(&self) -> usize {
        self.dim_v
    }

    pub fn set(&self) -> &BoxSet {
        &self.set
    }

    pub fn solution(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.solution.as_ref()
    }

    pub fn zbar(&self) -> Option<DVector<f64>> {
        self.solution.as_ref().map(|(x, y)| self.stack(x, y))
    }

    pub fn has_hessian(&self) -> bool {
        self.hess_l.is_some()
    }

    pub fn objective(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.h)(x, v)
    }

    pub fn grad_h(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.grad_h)(x, v)
    }

    pub fn constraints(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.g)(x, v)
    }

    pub fn jac_g(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_g)(x, v)
    }

    /// `∇ₓL = ∇h + ∇gᵀ y`.
    pub fn grad_lagrangian(&self, x: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.grad_h(x, v) + self.jac_g(x, v).transpose() * y
    }

    /// `∇²ₓₓL`, by central differences of `∇ₓL` when no analytic Hessian is set.
    pub fn hess_lagrangian(&self, x: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        match &self.hess_l {
            Some(hf) => hf(x, y, v),
            None => {
                let j = linalg::fd_jacobian(|xx| self.grad_lagrangian(xx, y, v), x, self.n);
                (&j + j.transpose()) * 0.5
            }
        }
    }

    pub fn stack(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.n + self.m);
        z.rows_mut(0, self.n).copy_from(x);
        z.rows_mut(self.n, self.m).copy_from(y);
        z
    }

    pub fn unstack(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, self.n).into_owned(), z.rows(self.n, self.m).into_owned())
    }

    /// `(∇h + ∇gᵀy, g)`.
    pub fn kkt_map(&self, z: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (x, y) = self.unstack(z);
        let mut out = DVector::zeros(self.n + self.m);
        out.rows_mut(0, self.n).copy_from(&self.grad_lagrangian(&x, &y, v));
        out.rows_mut(self.n, self.m).copy_from(&self.constraints(&x, v));
        out
    }

    /// `[[∇²L, ∇gᵀ], [∇g, 0]]`.
    pub fn kkt_jacobian(&self, z: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let (x, y) = self.unstack(z);
        let jg = self.jac_g(&x, v);
        kkt_matrix(&self.hess_lagrangian(&x, &y, v), &jg)
    }

    /// `C × ℝ^m`.
    pub fn kkt_set(&self) -> BoxSet {
        self.set.product(&BoxSet::free(self.m))
    }

    /// The KKT system as a generalized equation in `z = (x, y)` with the
    /// product split at `n`.
    pub fn kkt_equation(&self) -> GeneralizedEquation {
        let (pf, pj) = (self.clone(), self.clone());
        let ge = GeneralizedEquation::new(self.kkt_set(), self.dim_v, move |z, v| pf.kkt_map(z, v))
            .with_jacobian(move |z, v| pj.kkt_jacobian(z, v))
            .with_split(self.n);
        match self.zbar() {
            Some(zbar) => ge.with_solution(zbar).expect("solution verified on attach"),
            None => ge,
        }
    }

    /// The augmented Lagrangian method as a multistep problem:
    /// inner `∇h + ∇gᵀ(y_k + ϱ g) + N_C(x) ∋ 0`, outer operator
    /// `H_y = [∇gᵀ; -ϱ⁻¹ I]`.
    pub fn alm_problem(&self, rho: f64) -> Result<MultistepProblem> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("penalty must be positive, got {rho}")));
        }
        let (n, m) = (self.n, self.m);
        let p = self.clone();
        let f: XyVecFn = Arc::new(move |x, y, v| p.kkt_map(&p.stack(x, y), v));
        let p = self.clone();
        let f_tilde: XyVecFn = Arc::new(move |x, y, v| {
            let shifted = y + rho * p.constraints(x, v);
            p.grad_lagrangian(x, &shifted, v)
        });
        let p = self.clone();
        let f_tilde_jac: XyMatFn = Arc::new(move |x, y, v| {
            let jg = p.jac_g(x, v);
            let shifted = y + rho * p.constraints(x, v);
            p.hess_lagrangian(x, &shifted, v) + rho * jg.transpose() * jg
        });
        let p = self.clone();
        let h_y: XyMatFn = Arc::new(move |xi, _eta, v| {
            let mut hy = DMatrix::zeros(n + m, m);
            hy.view_mut((0, 0), (n, m)).copy_from(&p.jac_g(xi, v).transpose());
            hy.view_mut((n, 0), (m, m))
                .copy_from(&(DMatrix::<f64>::identity(m, m) * (-1.0 / rho)));
            hy
        });
        let mp = MultistepProblem::new(n, m, self.dim_v, self.kkt_set(), f, self.set.clone(), f_tilde, h_y)?
            .with_inner_jacobian(f_tilde_jac);
        match &self.solution {
            Some((x, y)) => mp.with_solution(x.clone(), y.clone()),
            None => Ok(mp),
        }
    }
}

fn kkt_matrix(upper_left: &DMatrix<f64>, jg: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = (jg.nrows(), jg.ncols());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(upper_left);
    k.view_mut((0, n), (n, m)).copy_from(&jg.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(jg);
    k
}

/// KKT map value at `(x, y)` together with its cone and natural residual.
#[derive(Debug, Clone, PartialEq)]
pub struct KktEvaluation {
    pub value: DVector<f64>,
    pub set: BoxSet,
    pub natural_residual: f64,
}

pub fn assemble_kkt(nlp: &NlpProblem, x: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>) -> Result<KktEvaluation> {
    check_dim(nlp.n, x.len(), "KKT primal point")?;
    check_dim(nlp.m, y.len(), "KKT dual point")?;
    check_dim(nlp.dim_v, v.len(), "KKT disturbance")?;
    let z = nlp.stack(x, y);
    let value = nlp.kkt_map(&z, v);
    check_dim(nlp.n + nlp.m, value.len(), "KKT map output")?;
    let set = nlp.kkt_set();
    let natural_residual = natural_residual(&z, &value, &set)?.norm();
    Ok(KktEvaluation {
        value,
        set,
        natural_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Licq {
    pub holds: bool,
    pub sigma_min: f64,
}

/// Smallest singular value of `∇g(x, 0)`; LICQ holds when it exceeds
/// [`LICQ_TOL`].
pub fn licq_check(nlp: &NlpProblem, x: &DVector<f64>) -> Licq {
    if nlp.m == 0 {
        return Licq {
            holds: true,
            sigma_min: f64::INFINITY,
        };
    }
    let jg = nlp.jac_g(x, &DVector::zeros(nlp.dim_v));
    if jg.nrows() > jg.ncols() {
        return Licq {
            holds: false,
            sigma_min: 0.0,
        };
    }
    let sigma_min = linalg::min_singular_value(&jg);
    Licq {
        holds: sigma_min > LICQ_TOL,
        sigma_min,
    }
}

/// One SQP step: primal-dual solution of
/// `min_{x ∈ C} ½⟨B(x - x_k), x - x_k⟩ + ∇h(x_k)(x - x_k)` s.t.
/// `g(x_k) + ∇g(x_k)(x - x_k) = 0`.
pub fn sqp_step(
    nlp: &NlpProblem,
    x_k: &DVector<f64>,
    y_k: &DVector<f64>,
    b: &DMatrix<f64>,
    v_k: &DVector<f64>,
    opts: &StepOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(nlp.n, x_k.len(), "SQP x")?;
    check_dim(nlp.m, y_k.len(), "SQP y")?;
    check_dim(nlp.n, b.nrows(), "SQP Hessian rows")?;
    check_dim(nlp.n, b.ncols(), "SQP Hessian cols")?;
    check_dim(nlp.dim_v, v_k.len(), "SQP disturbance")?;
    let jg = nlp.jac_g(x_k, v_k);
    let mut a = DVector::zeros(nlp.n + nlp.m);
    a.rows_mut(0, nlp.n).copy_from(&(nlp.grad_h(x_k, v_k) - b * x_k));
    a.rows_mut(nlp.n, nlp.m)
        .copy_from(&(nlp.constraints(x_k, v_k) - &jg * x_k));
    let qp = MixedAvi::new(a, kkt_matrix(b, &jg), nlp.kkt_set())?;
    let z = solve_subproblem(&qp, &nlp.stack(x_k, y_k), opts)?;
    Ok(nlp.unstack(&z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BroydenFamily {
    Bfgs,
    Dfp,
}

/// Symmetric quasi-Newton approximation of `∇²ₓₓL`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianApprox {
    pub b: DMatrix<f64>,
    pub family: BroydenFamily,
    /// Updates are skipped when `yᵀs ≤ tol · ‖s‖ ‖y‖`.
    pub curvature_skip_tol: f64,
    pub skipped: usize,
}

impl HessianApprox {
    pub fn new(b: DMatrix<f64>, family: BroydenFamily) -> Self {
        Self {
            b,
            family,
            curvature_skip_tol: 1e-8,
            skipped: 0,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.b.clone().symmetric_eigenvalues().min()
    }
}

/// BFGS: `B⁺ = B - B s sᵀ B / sᵀBs + y yᵀ / yᵀs`;
/// DFP: `B⁺ = (I - ρ y sᵀ) B (I - ρ s yᵀ) + ρ y yᵀ`, `ρ = 1/yᵀs`.
pub fn broyden_update(approx: &HessianApprox, s: &DVector<f64>, yvec: &DVector<f64>) -> HessianApprox {
    let sy = s.dot(yvec);
    let mut out = approx.clone();
    if !(sy > approx.curvature_skip_tol * s.norm() * yvec.norm()) || s.norm() == 0.0 {
        out.skipped += 1;
        return out;
    }
    let b = &approx.b;
    let n = b.nrows();
    let next = match approx.family {
        BroydenFamily::Bfgs => {
            let bs = b * s;
            let sbs = s.dot(&bs);
            if !(sbs > 0.0) {
                out.skipped += 1;
                return out;
            }
            b - (&bs * bs.transpose()) / sbs + (yvec * yvec.transpose()) / sy
        }
        BroydenFamily::Dfp => {
            let rho = 1.0 / sy;
            let left = DMatrix::<f64>::identity(n, n) - rho * yvec * s.transpose();
            &left * b * left.transpose() + rho * yvec * yvec.transpose()
        }
    };
    out.b = (&next + next.transpose()) * 0.5;
    out
}

/// Initial Hessian `(‖Δ∇L‖/‖s‖) I` from a short probe step along `-∇ₓL`.
pub fn default_initial_hessian(nlp: &NlpProblem, x0: &DVector<f64>, y0: &DVector<f64>) -> DMatrix<f64> {
    let v0 = DVector::zeros(nlp.dim_v);
    let grad = nlp.grad_lagrangian(x0, y0, &v0);
    let t = 1e-3 * (1.0 + x0.norm());
    let dir = if grad.norm() > 0.0 {
        -&grad / grad.norm()
    } else {
        let mut e = DVector::zeros(nlp.n);
        if nlp.n > 0 {
            e[0] = 1.0;
        }
        e
    };
    let s = dir * t;
    let dy = nlp.grad_lagrangian(&(x0 + &s), y0, &v0) - grad;
    let scale = dy.norm() / s.norm();
    let scale = if scale.is_finite() && scale > 1e-8 { scale } else { 1.0 };
    DMatrix::identity(nlp.n, nlp.n) * scale
}

/// Settings of [`run_sqp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpConfig {
    pub family: BroydenFamily,
    pub tol: f64,
    pub max_iter: usize,
    pub enable_oracle: bool,
    pub curvature_skip_tol: f64,
    /// Updates are skipped when `‖s‖ ≤ min_update_step · (1 + ‖x‖)`: the
    /// gradient difference is then dominated by rounding.
    pub min_update_step: f64,
    pub divergence_bound: f64,
    pub step: StepOptions,
}

impl Default for SqpConfig {
    fn default() -> Self {
        Self {
            family: BroydenFamily::Bfgs,
            tol: 1e-12,
            max_iter: 100,
            enable_oracle: false,
            curvature_skip_tol: 1e-8,
            min_update_step: 1e-10,
            divergence_bound: 1e6,
            step: StepOptions::default(),
        }
    }
}

/// Quasi-Newton SQP run.
#[derive(Debug, Clone, PartialEq)]
pub struct SqpRun {
    pub trace: Trace,
    /// `‖B_k - ∇²L(x̄, ȳ)‖₂` per iterate, when the solution is known.
    pub hessian_errors: Option<Vec<f64>>,
    pub final_hessian: HessianApprox,
}

impl SqpRun {
    /// `‖z_k - z̄‖ + ‖B_k - ∇²L(x̄, ȳ)‖` per iterate.
    pub fn combined_measure(&self) -> Option<Vec<f64>> {
        let errs = self.trace.errors_to_zbar.as_ref()?;
        let herr = self.hessian_errors.as_ref()?;
        Some(errs.iter().zip(herr).map(|(a, b)| a + b).collect())
    }
}

/// Iterates [`sqp_step`] and [`broyden_update`] with
/// `s = x_{k+1} - x_k`, `y = ∇ₓL(x_{k+1}, y_{k+1}) - ∇ₓL(x_k, y_{k+1})`.
pub fn run_sqp(
    nlp: &NlpProblem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    b0: Option<DMatrix<f64>>,
    dist: &DisturbanceSequence,
    cfg: &SqpConfig,
) -> Result<SqpRun> {
    check_dim(nlp.n, x0.len(), "SQP x0")?;
    check_dim(nlp.m, y0.len(), "SQP y0")?;
    let b0 = b0.unwrap_or_else(|| default_initial_hessian(nlp, x0, y0));
    check_dim(nlp.n, b0.nrows(), "B0 rows")?;
    check_dim(nlp.n, b0.ncols(), "B0 cols")?;
    let mut approx = HessianApprox {
        curvature_skip_tol: cfg.curvature_skip_tol,
        ..HessianApprox::new(b0, cfg.family)
    };
    let v0 = DVector::zeros(nlp.dim_v);
    let hbar = nlp.solution.as_ref().map(|(x, y)| nlp.hess_lagrangian(x, y, &v0));
    let herr = |b: &DMatrix<f64>| hbar.as_ref().map(|h| linalg::spectral_norm(&(b - h)));
    let mut hessian_errors: Option<Vec<f64>> = herr(&approx.b).map(|e| vec![e]);
    let opts = StepOptions {
        enable_oracle: cfg.enable_oracle,
        ..cfg.step
    };
    let (mut x, mut y) = (x0.clone(), y0.clone());
    let res0 = assemble_kkt(nlp, &x, &y, &v0)?.natural_residual;
    let mut trace = Trace::new(nlp.stack(&x, &y), res0, Some(nlp.n));
    trace.termination = if res0 <= cfg.tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    let mut stream = dist.stream(nlp.dim_v)?;
    for _ in 0..cfg.max_iter {
        if trace.termination == Termination::Converged {
            break;
        }
        let v = stream.next_disturbance();
        let started = Instant::now();
        match sqp_step(nlp, &x, &y, &approx.b, &v, &opts) {
            Ok((xn, yn)) => {
                let s = &xn - &x;
                let yvec = nlp.grad_lagrangian(&xn, &yn, &v) - nlp.grad_lagrangian(&x, &yn, &v);
                if s.norm() > cfg.min_update_step * (1.0 + x.norm()) {
                    approx = broyden_update(&approx, &s, &yvec);
                } else {
                    approx.skipped += 1;
                }
                let step_len = s.norm() + (&yn - &y).norm();
                x = xn;
                y = yn;
                let z = nlp.stack(&x, &y);
                let res = assemble_kkt(nlp, &x, &y, &v0)?.natural_residual;
                let kappa = linalg::inverse_norm(&kkt_matrix(&approx.b, &nlp.jac_g(&x, &v)));
                trace.step_times.push(started.elapsed());
                trace.step_status.push(StepStatus::Ok);
                trace.disturbances.push(v);
                trace.step_kappas.push(kappa);
                trace.residuals.push(res);
                trace.iterates.push(z.clone());
                if let (Some(list), Some(e)) = (hessian_errors.as_mut(), herr(&approx.b)) {
                    list.push(e);
                }
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
    if let Some(zbar) = nlp.zbar() {
        trace.set_reference(&zbar);
    }
    Ok(SqpRun {
        trace,
        hessian_errors,
        final_hessian: approx,
    })
}

/// Josephy-Newton on the KKT system with the given linearization (exact
/// SQP, sequential convexification, projected gradient).
pub fn run_kkt_newton(
    nlp: &NlpProblem,
    lin: &Linearization,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    dist: &DisturbanceSequence,
    cfg: &NewtonConfig,
) -> Result<Trace> {
    run_newton(&nlp.kkt_equation(), lin, &nlp.stack(x0, y0), dist, cfg)
}

/// Settings of the augmented Lagrangian method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlmConfig {
    pub rho: f64,
    pub inner: InnerMode,
    pub max_outer: usize,
    pub tol: f64,
    pub inner_tol: f64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            rho: 10.0,
            inner: InnerMode::Exact,
            max_outer: 100,
            tol: 1e-12,
            inner_tol: 1e-10,
        }
    }
}

impl AlmConfig {
    fn multistep(&self) -> MultistepConfig {
        MultistepConfig {
            tol: self.tol,
            max_iter: self.max_outer,
            inner: self.inner,
            inner_tol: self.inner_tol,
            ..MultistepConfig::default()
        }
    }
}

/// Minimizer of the augmented Lagrangian at `(y_k, v_k)`, i.e. a solution of
/// `∇h + ∇gᵀy_k + ϱ∇gᵀg + N_C(x) ∋ 0`, found by Newton from `x_start`.
pub fn alm_inner_solve(
    nlp: &NlpProblem,
    x_start: &DVector<f64>,
    y_k: &DVector<f64>,
    v_k: &DVector<f64>,
    cfg: &AlmConfig,
) -> Result<DVector<f64>> {
    let mp = nlp.alm_problem(cfg.rho)?;
    Ok(inner_solve(&mp, x_start, y_k, v_k, 0, &cfg.multistep())?.x)
}

/// ALM run realized through the multistep driver.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmRun {
    pub run: MultistepRun,
    /// `|y_k + ϱ g(x_{k+1}, v_k) - y_{k+1}|` per step, where `y_{k+1}` comes
    /// from the outer inclusion solve.
    pub dual_update_discrepancy: Vec<f64>,
}

impl AlmRun {
    pub fn trace(&self) -> &Trace {
        &self.run.trace
    }
}

/// Alternates the augmented-Lagrangian minimization and the multiplier
/// update `y_{k+1} = y_k + ϱ g(x_{k+1}, v_k)`; the update is computed as the
/// outer inclusion and compared to the closed form at every step.
pub fn run_alm(
    nlp: &NlpProblem,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    dist: &DisturbanceSequence,
    cfg: &AlmConfig,
) -> Result<AlmRun> {
    let mp = nlp.alm_problem(cfg.rho)?;
    let run = run_multistep(&mp, x0, y0, dist, &cfg.multistep())?;
    let dual_update_discrepancy = (0..run.trace.steps())
        .map(|k| {
            let (_, yk) = nlp.unstack(&run.trace.iterates[k]);
            let (x1, y1) = nlp.unstack(&run.trace.iterates[k + 1]);
            let v = run.applied_disturbance(k);
            let closed = yk + cfg.rho * nlp.constraints(&x1, &v);
            (closed - y1).amax()
        })
        .collect();
    Ok(AlmRun {
        run,
        dual_update_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// `min x² s.t. x - 1 = 0` on `set`.
    fn scalar_nlp(set: BoxSet) -> NlpProblem {
        NlpProblem::new(
            1,
            1,
            0,
            set,
            Arc::new(|x, _| x[0] * x[0]),
            Arc::new(|x, _| v(&[2.0 * x[0]])),
            Arc::new(|x, _| v(&[x[0] - 1.0])),
            Arc::new(|_, _| DMatrix::from_element(1, 1, 1.0)),
        )
        .unwrap()
        .with_hessian(Arc::new(|_, _, _| DMatrix::from_element(1, 1, 2.0)))
    }

    #[test]
    fn kkt_examples() {
        let nlp = scalar_nlp(BoxSet::free(1));
        let e = assemble_kkt(&nlp, &v(&[1.0]), &v(&[-2.0]), &v(&[])).unwrap();
        assert_eq!(e.value, v(&[0.0, 0.0]));
        assert_eq!(e.natural_residual, 0.0);
        let e = assemble_kkt(&nlp, &v(&[0.0]), &v(&[0.0]), &v(&[])).unwrap();
        assert_eq!(e.value, v(&[0.0, -1.0]));
        assert!(matches!(
            assemble_kkt(&nlp, &v(&[0.0, 1.0]), &v(&[0.0]), &v(&[])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn licq_examples() {
        let nlp = scalar_nlp(BoxSet::free(1));
        let l = licq_check(&nlp, &v(&[0.3]));
        assert!(l.holds);
        assert!((l.sigma_min - 1.0).abs() < 1e-14);

        let mk = |rows: [f64; 4]| {
            NlpProblem::new(
                2,
                2,
                0,
                BoxSet::free(2),
                Arc::new(|_, _| 0.0),
                Arc::new(|_, _| DVector::zeros(2)),
                Arc::new(|x, _| DVector::from_vec(vec![x[0], x[1]])),
                Arc::new(move |_, _| DMatrix::from_row_slice(2, 2, &rows)),
            )
            .unwrap()
        };
        assert!(!licq_check(&mk([1.0, 0.0, 1.0, 0.0]), &v(&[0.0, 0.0])).holds);
        let l = licq_check(&mk([1.0, 1.0, 1.0, -1.0]), &v(&[0.0, 0.0]));
        assert!(l.holds);
        assert!((l.sigma_min - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sqp_exact_on_quadratic() {
        let nlp = scalar_nlp(BoxSet::free(1));
        let (x, y) = sqp_step(
            &nlp,
            &v(&[0.0]),
            &v(&[0.0]),
            &DMatrix::from_element(1, 1, 2.0),
            &v(&[]),
            &StepOptions::default(),
        )
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((y[0] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn sqp_half_half() {
        // min ½xᵀx s.t. x1 + x2 = 1
        let nlp = NlpProblem::new(
            2,
            1,
            0,
            BoxSet::free(2),
            Arc::new(|x, _| 0.5 * x.dot(x)),
            Arc::new(|x, _| x.clone()),
            Arc::new(|x, _| v(&[x[0] + x[1] - 1.0])),
            Arc::new(|_, _| DMatrix::from_row_slice(1, 2, &[1.0, 1.0])),
        )
        .unwrap();
        let (x, y) = sqp_step(
            &nlp,
            &v(&[0.0, 0.0]),
            &v(&[0.0]),
            &DMatrix::identity(2, 2),
            &v(&[]),
            &StepOptions::default(),
        )
        .unwrap();
        assert!((x - v(&[0.5, 0.5])).norm() < 1e-14);
        assert!((y[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn bfgs_examples() {
        let h = HessianApprox::new(DMatrix::identity(3, 3), BroydenFamily::Bfgs);
        let e1 = v(&[1.0, 0.0, 0.0]);
        assert!((broyden_update(&h, &e1, &e1).b - DMatrix::identity(3, 3)).norm() < 1e-15);
        let up = broyden_update(&h, &e1, &(2.0 * &e1));
        assert!((up.b - DMatrix::from_diagonal(&v(&[2.0, 1.0, 1.0]))).norm() < 1e-15);
        let skipped = broyden_update(&h, &e1, &(-1.0 * &e1));
        assert_eq!(skipped.b, h.b);
        assert_eq!(skipped.skipped, 1);
    }

    #[test]
    fn dfp_satisfies_secant_and_stays_pd() {
        let h = HessianApprox::new(DMatrix::identity(2, 2), BroydenFamily::Dfp);
        let s = v(&[1.0, 0.5]);
        let y = v(&[2.0, 0.3]);
        let up = broyden_update(&h, &s, &y);
        assert!((&up.b * &s - &y).norm() < 1e-12);
        assert!(up.min_eigenvalue() > 0.0);
        let up_b = broyden_update(
            &HessianApprox::new(DMatrix::identity(2, 2), BroydenFamily::Bfgs),
            &s,
            &y,
        );
        assert!((&up_b.b * &s - &y).norm() < 1e-12);
    }

    #[test]
    fn alm_inner_examples() {
        let cfg = AlmConfig::default();
        let nlp = scalar_nlp(BoxSet::free(1));
        let x = alm_inner_solve(&nlp, &v(&[0.0]), &v(&[0.0]), &v(&[]), &cfg).unwrap();
        assert!((x[0] - 10.0 / 12.0).abs() < 1e-12);
        for rho in [0.5, 3.0, 40.0] {
            let x = alm_inner_solve(&nlp, &v(&[0.0]), &v(&[-2.0]), &v(&[]), &AlmConfig { rho, ..cfg }).unwrap();
            assert!((x[0] - 1.0).abs() < 1e-12);
        }
        let boxed = scalar_nlp(BoxSet::uniform(1, 0.0, 0.5).unwrap());
        let x = alm_inner_solve(&boxed, &v(&[0.0]), &v(&[0.0]), &v(&[]), &cfg).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
        // stationarity of the augmented Lagrangian: 2x + ϱ(x - 1) ∈ -N_[0,0.5](x)
        let w = v(&[2.0 * 0.5 + 10.0 * (0.5 - 1.0)]);
        let cert = crate::geometry::normal_cone_contains(boxed.set(), &x, &(-w), 1e-10).unwrap();
        assert!(cert.is_member());
    }

    #[test]
    fn alm_rejects_nonpositive_penalty() {
        let nlp = scalar_nlp(BoxSet::free(1));
        assert!(nlp.alm_problem(0.0).is_err());
    }

    #[test]
    fn alm_scalar_rate() {
        let nlp = scalar_nlp(BoxSet::free(1))
            .with_solution(v(&[1.0]), v(&[-2.0]))
            .unwrap();
        let run = run_alm(
            &nlp,
            &v(&[0.0]),
            &v(&[0.0]),
            &DisturbanceSequence::zero(),
            &AlmConfig::default(),
        )
        .unwrap();
        let ys: Vec<f64> = run.trace().iterates.iter().map(|z| z[1]).collect();
        // closed-form recursion y⁺ + 2 = (y + 2) · 2/(2 + ϱ)
        for w in ys.windows(2).take(6) {
            assert!(((w[1] + 2.0) - (w[0] + 2.0) / 6.0).abs() < 1e-12);
        }
        assert!(run.dual_update_discrepancy.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn perturbation_shapes() {
        let nlp = scalar_nlp(BoxSet::free(1)).with_perturbation(Perturbation::AdditiveOnG);
        assert_eq!(nlp.dim_v(), 1);
        assert_eq!(nlp.constraints(&v(&[1.0]), &v(&[0.25])), v(&[0.25]));
        let nlp = scalar_nlp(BoxSet::free(1)).with_perturbation(Perturbation::AdditiveOnGradH);
        assert_eq!(nlp.grad_h(&v(&[1.0]), &v(&[0.25])), v(&[2.25]));
        assert_eq!(nlp.objective(&v(&[1.0]), &v(&[0.25])), 1.25);
    }

    #[test]
    fn claimed_solution_checked() {
        assert!(scalar_nlp(BoxSet::free(1)).with_solution(v(&[1.0]), v(&[0.0])).is_err());
    }
}
