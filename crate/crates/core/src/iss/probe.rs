//! Sampling the solution map `p ↦ s(p)` of `f(x, p₁, p₂) + N_C(x) ∋ 0`
//! around a base parameter and comparing its Lipschitz ratios with the
//! implicit-function bound `ω · lîp_{pᵢ}(f)`, `ω = κ/(1 - κμ)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geneq::{run_newton, GeneralizedEquation, Linearization, NewtonConfig, Termination};
use crate::geometry::BoxSet;
use crate::iss::DisturbanceSequence;
use crate::linalg;
use crate::subproblem::{estimate_kappa, MixedAvi};

type ParamFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type ParamJac = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `f(x, p) + N_C(x) ∋ 0` with `p = (p₁, p₂)`, `p₁ ∈ ℝ^{p1_dim}`.
#[derive(Clone)]
pub struct ParametricEquation {
    f: ParamFn,
    jac_x: Option<ParamJac>,
    set: BoxSet,
    p1_dim: usize,
    p2_dim: usize,
}

impl std::fmt::Debug for ParametricEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricEquation")
            .field("dim_x", &self.set.dim())
            .field("p1_dim", &self.p1_dim)
            .field("p2_dim", &self.p2_dim)
            .finish()
    }
}

impl ParametricEquation {
    pub fn new<F>(set: BoxSet, p1_dim: usize, p2_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            jac_x: None,
            set,
            p1_dim,
            p2_dim,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac_x = Some(Arc::new(jac));
        self
    }

    pub fn dim_x(&self) -> usize {
        self.set.dim()
    }

    pub fn dim_p(&self) -> usize {
        self.p1_dim + self.p2_dim
    }

    pub fn eval(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, p)
    }

    /// Generalized equation in `x` with the parameter frozen at `p`.
    pub fn at(&self, p: &DVector<f64>) -> GeneralizedEquation {
        let f = self.f.clone();
        let p_f = p.clone();
        let ge = GeneralizedEquation::new(self.set.clone(), 0, move |x, _| f(x, &p_f));
        match &self.jac_x {
            Some(j) => {
                let j = j.clone();
                let p_j = p.clone();
                ge.with_jacobian(move |x, _| j(x, &p_j))
            }
            None => ge,
        }
    }

    fn jacobian(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac_x {
            Some(j) => j(x, p),
            None => linalg::fd_jacobian(|xx| (self.f)(xx, p), x, self.dim_x()),
        }
    }

    /// Solves at `p` by exact Newton from `start`.
    pub fn solve(&self, p: &DVector<f64>, start: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let cfg = NewtonConfig {
            tol,
            max_iter: 60,
            ..NewtonConfig::default()
        };
        let trace = run_newton(
            &self.at(p),
            &Linearization::ExactGradient,
            start,
            &DisturbanceSequence::zero(),
            &cfg,
        )?;
        match trace.termination {
            Termination::Converged => Ok(trace.last().clone()),
            _ => Err(trace.failed_step().cloned().unwrap_or(Error::MaxIterExceeded {
                iterations: trace.steps(),
                residual: trace.final_residual(),
            })),
        }
    }
}

/// Probe settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    /// Half-widths of the sampling boxes around `p̄₁` and `p̄₂`.
    pub radii: (f64, f64),
    /// Radius of the `x` neighbourhood used for `μ̂` and `lîp` estimates.
    pub x_radius: f64,
    pub samples: usize,
    pub slack: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            radii: (0.1, 0.1),
            x_radius: 0.1,
            samples: 100,
            slack: 0.1,
            seed: 0,
            tol: 1e-12,
        }
    }
}

/// Sampled Lipschitz behaviour of the solution map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionMapProbe {
    pub pbar: Vec<f64>,
    pub xbar: Vec<f64>,
    /// `lîp_{p₁}(f)`, `lîp_{p₂}(f)` by finite differences.
    pub lip_f: [f64; 2],
    /// Largest sampled `‖s(p) - s(p̄)‖ / ‖pᵢ - p̄ᵢ‖` per axis.
    pub max_ratio: [f64; 2],
    pub kappa: f64,
    pub mu: f64,
    /// `κ̂ / (1 - κ̂ μ̂)`, infinite when `κ̂ μ̂ ≥ 1`.
    pub omega: f64,
    pub samples_per_axis: usize,
    pub failures: usize,
    /// Joint samples violating `‖x - x̄‖ ≤ (1 + slack) ω Σ lîpᵢ ‖pᵢ - p̄ᵢ‖`.
    pub joint_violations: usize,
    pub slack: f64,
}

impl SolutionMapProbe {
    /// Whether every sampled ratio respects `ω · lîp` within the slack.
    pub fn bound_holds(&self) -> bool {
        self.omega.is_finite()
            && self.joint_violations == 0
            && (0..2).all(|i| self.max_ratio[i] <= (1.0 + self.slack) * self.omega * self.lip_f[i] + 1e-12)
    }
}

fn uniform_in_box(rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    DVector::from_fn(center.len(), |i, _| center[i] + radius * rng.random_range(-1.0..=1.0))
}

/// Solves at `p̄`, estimates `κ̂` (regularity of the linearization at `x̄`),
/// `μ̂` (Lipschitz constant of the linearization remainder) and `lîp_{pᵢ}(f)`,
/// then samples each parameter axis and jointly.
pub fn probe_solution_map(
    pe: &ParametricEquation,
    pbar: &DVector<f64>,
    x_start: &DVector<f64>,
    opts: &ProbeOptions,
) -> Result<SolutionMapProbe> {
    check_dim(pe.dim_p(), pbar.len(), "probe base parameter")?;
    check_dim(pe.dim_x(), x_start.len(), "probe start point")?;
    let xbar = pe.solve(pbar, x_start, opts.tol)?;
    let jbar = pe.jacobian(&xbar, pbar);
    let fbar = pe.eval(&xbar, pbar);
    let avi = MixedAvi::new(&fbar - &jbar * &xbar, jbar.clone(), pe.set.clone())?;
    let kappa = estimate_kappa(&avi, &xbar, opts.x_radius, opts.samples, opts.seed)?.kappa_upper();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let radius_of = |i: usize| if i == 0 { opts.radii.0 } else { opts.radii.1 };
    let p_range = |i: usize| if i == 0 { 0..pe.p1_dim } else { pe.p1_dim..pe.dim_p() };

    // μ̂ and lîp_{pᵢ}(f) over the neighbourhood
    let mut mu: f64 = 0.0;
    let mut lip_f = [0.0f64; 2];
    for _ in 0..opts.samples {
        let p = DVector::from_fn(pe.dim_p(), |j, _| {
            let r = if j < pe.p1_dim { opts.radii.0 } else { opts.radii.1 };
            pbar[j] + r * rng.random_range(-1.0..=1.0)
        });
        let x1 = pe.set.project(&uniform_in_box(&mut rng, &xbar, opts.x_radius))?;
        let x2 = pe.set.project(&uniform_in_box(&mut rng, &xbar, opts.x_radius))?;
        let dx = &x1 - &x2;
        if dx.norm() > 0.0 {
            let rem = (pe.eval(&x1, &p) - pe.eval(&x2, &p)) - &jbar * &dx;
            mu = mu.max(rem.norm() / dx.norm());
        }
        for (axis, lip) in lip_f.iter_mut().enumerate() {
            let range = p_range(axis);
            if range.is_empty() {
                continue;
            }
            let mut q = p.clone();
            for j in range.clone() {
                q[j] = pbar[j] + radius_of(axis) * rng.random_range(-1.0..=1.0);
            }
            let dp = (q.rows(range.start, range.len()) - p.rows(range.start, range.len())).norm();
            if dp > 0.0 {
                *lip = lip.max((pe.eval(&x1, &q) - pe.eval(&x1, &p)).norm() / dp);
            }
        }
    }
    let omega = if kappa * mu < 1.0 {
        kappa / (1.0 - kappa * mu)
    } else {
        f64::INFINITY
    };

    let mut max_ratio = [0.0f64; 2];
    let mut failures = 0;
    for (axis, ratio) in max_ratio.iter_mut().enumerate() {
        let range = p_range(axis);
        if range.is_empty() {
            continue;
        }
        for _ in 0..opts.samples {
            let mut p = pbar.clone();
            for j in range.clone() {
                p[j] = pbar[j] + radius_of(axis) * rng.random_range(-1.0..=1.0);
            }
            let dp = (&p - pbar).norm();
            if dp == 0.0 {
                continue;
            }
            match pe.solve(&p, &xbar, opts.tol) {
                Ok(x) => *ratio = ratio.max((x - &xbar).norm() / dp),
                Err(_) => failures += 1,
            }
        }
    }
    let mut joint_violations = 0;
    for _ in 0..opts.samples {
        let p = DVector::from_fn(pe.dim_p(), |j, _| {
            let r = if j < pe.p1_dim { opts.radii.0 } else { opts.radii.1 };
            pbar[j] + r * rng.random_range(-1.0..=1.0)
        });
        let d1 = (p.rows(0, pe.p1_dim) - pbar.rows(0, pe.p1_dim)).norm();
        let d2 = (p.rows(pe.p1_dim, pe.p2_dim) - pbar.rows(pe.p1_dim, pe.p2_dim)).norm();
        match pe.solve(&p, &xbar, opts.tol) {
            Ok(x) => {
                let bound = omega * (lip_f[0] * d1 + lip_f[1] * d2);
                if (x - &xbar).norm() > (1.0 + opts.slack) * bound + 1e-12 {
                    joint_violations += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    Ok(SolutionMapProbe {
        pbar: pbar.iter().copied().collect(),
        xbar: xbar.iter().copied().collect(),
        lip_f,
        max_ratio,
        kappa,
        mu,
        omega,
        samples_per_axis: opts.samples,
        failures,
        joint_violations,
        slack: opts.slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_probe_exact_constants() {
        // x - p1 - 2 p2 = 0
        let pe = ParametricEquation::new(BoxSet::free(1), 1, 1, |x, p| {
            DVector::from_vec(vec![x[0] - p[0] - 2.0 * p[1]])
        });
        let probe = probe_solution_map(&pe, &DVector::zeros(2), &DVector::zeros(1), &ProbeOptions::default()).unwrap();
        assert!((probe.lip_f[0] - 1.0).abs() < 1e-6);
        assert!((probe.lip_f[1] - 2.0).abs() < 1e-6);
        assert!((probe.omega - 1.0).abs() < 1e-6);
        assert!((probe.max_ratio[0] - 1.0).abs() < 1e-6);
        assert!((probe.max_ratio[1] - 2.0).abs() < 1e-6);
        assert!(probe.bound_holds());
        assert_eq!(probe.failures, 0);
    }
}
