//! Built-in named problems and inline problem definitions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geneq::GeneralizedEquation;
use crate::geometry::BoxSet;
use crate::iss::ParametricEquation;
use crate::multistep::{MultistepProblem, XyMatFn, XyVecFn};
use crate::nlp::{NlpProblem, Perturbation};
use crate::subproblem::{solve_avi_enumerate, MixedAvi};

/// A registered problem with its default starting point.
#[derive(Clone, Debug)]
pub enum Problem {
    /// A generalized equation with an additive disturbance on `f`.
    Equation {
        ge: GeneralizedEquation,
        z0: DVector<f64>,
        /// Two-block structure for the multistep method, when available.
        multistep: Option<MultistepProblem>,
    },
    Nlp {
        nlp: NlpProblem,
        x0: DVector<f64>,
        y0: DVector<f64>,
    },
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Equation { .. } => "equation",
            Problem::Nlp { .. } => "nlp",
        }
    }

    /// Start point stacked as `z0` (`(x0, y0)` for programs).
    pub fn start(&self) -> DVector<f64> {
        match self {
            Problem::Equation { z0, .. } => z0.clone(),
            Problem::Nlp { nlp, x0, y0 } => nlp.stack(x0, y0),
        }
    }

    pub fn zbar(&self) -> Option<DVector<f64>> {
        match self {
            Problem::Equation { ge, .. } => ge.zbar().cloned(),
            Problem::Nlp { nlp, .. } => nlp.zbar(),
        }
    }

    pub fn dim_z(&self) -> usize {
        match self {
            Problem::Equation { ge, .. } => ge.dim_z(),
            Problem::Nlp { nlp, .. } => nlp.n() + nlp.m(),
        }
    }

    /// Replaces the start point; `z` is stacked `(x, y)` for programs.
    pub fn with_start(self, z: DVector<f64>) -> Result<Self> {
        check_dim(self.dim_z(), z.len(), "start point")?;
        Ok(match self {
            Problem::Equation { ge, multistep, .. } => Problem::Equation { ge, z0: z, multistep },
            Problem::Nlp { nlp, .. } => {
                let (x0, y0) = nlp.unstack(&z);
                Problem::Nlp { nlp, x0, y0 }
            }
        })
    }
}

/// Name and one-line description of a registered problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProblemInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub description: &'static str,
}

pub const PROBLEMS: &[ProblemInfo] = &[
    ProblemInfo {
        name: "scalar-eq",
        kind: "nlp",
        description: "min x^2 s.t. x - 1 = 0; solution (1, -2)",
    },
    ProblemInfo {
        name: "scalar-root",
        kind: "equation",
        description: "z^2 - 1 + v = 0 on the real line; solution 1",
    },
    ProblemInfo {
        name: "rosenbrock-circle",
        kind: "nlp",
        description: "Rosenbrock objective on the circle x1^2 + x2^2 = 2; solution (1, 1, 0)",
    },
    ProblemInfo {
        name: "box-qp",
        kind: "nlp",
        description: "strictly convex QP on [0,1]^3 with x1 + x2 + x3 = 1; bound x3 = 0 strongly active",
    },
    ProblemInfo {
        name: "two-constraint",
        kind: "nlp",
        description: "min x1 + x2 + x3 s.t. |x|^2 = 3, x1 = x2; solution (-1, -1, -1, 0.5, 0)",
    },
    ProblemInfo {
        name: "coupled-cubic",
        kind: "equation",
        description: "(x + x^3 - y, 4y - x - 7) = 0 with blocks x | y; solution (1, 2)",
    },
];

/// Parametric problems accepted by the probe command.
pub const PARAMETRIC: &[ProblemInfo] = &[
    ProblemInfo {
        name: "affine-probe",
        kind: "parametric",
        description: "x - p1 - 2 p2 = 0 on the real line; solution map p1 + 2 p2",
    },
    ProblemInfo {
        name: "scalar-eq",
        kind: "parametric",
        description: "KKT of min x^2 + p2 x s.t. x = p1; x = p1, y = -2 p1 - p2",
    },
];

fn dv(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn unknown(name: &str) -> Error {
    let names: Vec<&str> = PROBLEMS.iter().map(|p| p.name).collect();
    Error::InvalidParameter(format!("unknown problem '{name}'; valid names: {}", names.join(", ")))
}

/// Builds a registered problem by name.
pub fn problem(name: &str) -> Result<Problem> {
    match name {
        "scalar-eq" => Ok(Problem::Nlp {
            nlp: scalar_eq()?,
            x0: dv(&[0.0]),
            y0: dv(&[0.0]),
        }),
        "scalar-root" => Ok(Problem::Equation {
            ge: scalar_root()?,
            z0: dv(&[2.0]),
            multistep: None,
        }),
        "rosenbrock-circle" => Ok(Problem::Nlp {
            nlp: rosenbrock_circle()?,
            x0: dv(&[1.02, 0.98]),
            y0: dv(&[0.0]),
        }),
        "box-qp" => Ok(Problem::Nlp {
            nlp: box_qp()?,
            x0: dv(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
            y0: dv(&[0.0]),
        }),
        "two-constraint" => Ok(Problem::Nlp {
            nlp: two_constraint()?,
            x0: dv(&[-1.1, -0.9, -1.05]),
            y0: dv(&[0.4, 0.1]),
        }),
        "coupled-cubic" => {
            let (ge, mp) = coupled_cubic()?;
            Ok(Problem::Equation {
                ge,
                z0: dv(&[1.3, 2.2]),
                multistep: Some(mp),
            })
        }
        other => Err(unknown(other)),
    }
}

/// `min x²` s.t. `x - 1 + v = 0` on `ℝ`.
pub fn scalar_eq() -> Result<NlpProblem> {
    scalar_eq_on(BoxSet::free(1))
}

/// The scalar program on a custom box.
pub fn scalar_eq_on(set: BoxSet) -> Result<NlpProblem> {
    let nlp = NlpProblem::new(
        1,
        1,
        0,
        set,
        Arc::new(|x, _| x[0] * x[0]),
        Arc::new(|x, _| dv(&[2.0 * x[0]])),
        Arc::new(|x, _| dv(&[x[0] - 1.0])),
        Arc::new(|_, _| DMatrix::from_element(1, 1, 1.0)),
    )?
    .with_hessian(Arc::new(|_, _, _| DMatrix::from_element(1, 1, 2.0)))
    .with_perturbation(Perturbation::AdditiveOnG);
    if nlp.set().contains(&dv(&[1.0]), 0.0) {
        nlp.with_solution(dv(&[1.0]), dv(&[-2.0]))
    } else {
        Ok(nlp)
    }
}

/// `z² - 1 + v = 0`.
pub fn scalar_root() -> Result<GeneralizedEquation> {
    GeneralizedEquation::additive(BoxSet::free(1), |z| dv(&[z[0] * z[0] - 1.0]))
        .with_jacobian(|z, _| DMatrix::from_element(1, 1, 2.0 * z[0]))
        .with_solution(dv(&[1.0]))
}

/// `min (1 - x₁)² + 100(x₂ - x₁²)²` s.t. `x₁² + x₂² - 2 + v = 0`.
pub fn rosenbrock_circle() -> Result<NlpProblem> {
    NlpProblem::new(
        2,
        1,
        0,
        BoxSet::free(2),
        Arc::new(|x, _| rosenbrock(x)),
        Arc::new(|x, _| rosenbrock_grad(x)),
        Arc::new(|x, _| dv(&[x.dot(x) - 2.0])),
        Arc::new(|x, _| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]])),
    )?
    .with_hessian(Arc::new(|x, y, _| {
        rosenbrock_hess(x) + DMatrix::identity(2, 2) * (2.0 * y[0])
    }))
    .with_perturbation(Perturbation::AdditiveOnG)
    .with_solution(dv(&[1.0, 1.0]), dv(&[0.0]))
}

/// Chained Rosenbrock function `Σ (1 - xᵢ)² + 100 (xᵢ₊₁ - xᵢ²)²`.
pub fn rosenbrock(x: &DVector<f64>) -> f64 {
    (0..x.len().saturating_sub(1))
        .map(|i| (1.0 - x[i]).powi(2) + 100.0 * (x[i + 1] - x[i] * x[i]).powi(2))
        .sum()
}

pub fn rosenbrock_grad(x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len().saturating_sub(1) {
        let t = x[i + 1] - x[i] * x[i];
        g[i] += -2.0 * (1.0 - x[i]) - 400.0 * x[i] * t;
        g[i + 1] += 200.0 * t;
    }
    g
}

pub fn rosenbrock_hess(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        h[(i, i)] += 2.0 + 1200.0 * x[i] * x[i] - 400.0 * x[i + 1];
        h[(i, i + 1)] -= 400.0 * x[i];
        h[(i + 1, i)] -= 400.0 * x[i];
        h[(i + 1, i + 1)] += 200.0;
    }
    h
}

/// `min ½xᵀQx + cᵀx` on `[0,1]³` s.t. `x₁ + x₂ + x₃ - 1 + v = 0`; the
/// reference solution is taken from the enumeration oracle on the (affine)
/// KKT system.
pub fn box_qp() -> Result<NlpProblem> {
    let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
    let c = dv(&[-1.0, -2.0, 3.0]);
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    let b = dv(&[1.0]);
    let nlp = quadratic_program(q, c, a, b, BoxSet::uniform(3, 0.0, 1.0)?)?;
    let (x, y) = qp_reference(&nlp)?;
    nlp.with_solution(x, y)
}

/// `min ½xᵀQx + cᵀx` s.t. `Ax - b + v = 0`, `x ∈ C`.
pub fn quadratic_program(
    q: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    set: BoxSet,
) -> Result<NlpProblem> {
    let n = c.len();
    check_dim(n, q.nrows(), "Q rows")?;
    check_dim(n, q.ncols(), "Q cols")?;
    check_dim(n, a.ncols(), "A cols")?;
    check_dim(a.nrows(), b.len(), "b")?;
    let m = a.nrows();
    let (q1, q2, q3, c1, c2, a1, a2) = (q.clone(), q.clone(), q, c.clone(), c, a.clone(), a);
    Ok(NlpProblem::new(
        n,
        m,
        0,
        set,
        Arc::new(move |x, _| 0.5 * x.dot(&(&q1 * x)) + c1.dot(x)),
        Arc::new(move |x, _| &q2 * x + &c2),
        Arc::new(move |x, _| &a1 * x - &b),
        Arc::new(move |_, _| a2.clone()),
    )?
    .with_hessian(Arc::new(move |_, _, _| q3.clone()))
    .with_perturbation(Perturbation::AdditiveOnG))
}

/// Unique KKT point of a program with affine KKT map, via enumeration.
pub fn qp_reference(nlp: &NlpProblem) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = nlp.n() + nlp.m();
    let z0 = DVector::zeros(n);
    let v0 = DVector::zeros(nlp.dim_v());
    let m = nlp.kkt_jacobian(&z0, &v0);
    let a = nlp.kkt_map(&z0, &v0);
    let sols = solve_avi_enumerate(&MixedAvi::new(a, m, nlp.kkt_set())?)?;
    match sols.solutions.len() {
        1 => Ok(nlp.unstack(&sols.solutions[0])),
        count => Err(Error::NonUnique { count }),
    }
}

/// `min x₁ + x₂ + x₃` s.t. `‖x‖² - 3 = 0`, `x₁ - x₂ = 0`.
pub fn two_constraint() -> Result<NlpProblem> {
    NlpProblem::new(
        3,
        2,
        0,
        BoxSet::free(3),
        Arc::new(|x, _| x.sum()),
        Arc::new(|_, _| DVector::from_element(3, 1.0)),
        Arc::new(|x, _| dv(&[x.dot(x) - 3.0, x[0] - x[1]])),
        Arc::new(|x, _| DMatrix::from_row_slice(2, 3, &[2.0 * x[0], 2.0 * x[1], 2.0 * x[2], 1.0, -1.0, 0.0])),
    )?
    .with_hessian(Arc::new(|_, y, _| DMatrix::identity(3, 3) * (2.0 * y[0])))
    .with_perturbation(Perturbation::AdditiveOnG)
    .with_solution(dv(&[-1.0, -1.0, -1.0]), dv(&[0.5, 0.0]))
}

/// `(x + x³ - y, 4y - x - 7) + v = 0` as a single equation and as a
/// two-block problem with inner equation `x + x³ - y_k = 0` and exact
/// partial operator `H_y = (-1, 4)ᵀ`.
pub fn coupled_cubic() -> Result<(GeneralizedEquation, MultistepProblem)> {
    let ge = GeneralizedEquation::additive(BoxSet::free(2), |z| {
        dv(&[z[0] + z[0].powi(3) - z[1], 4.0 * z[1] - z[0] - 7.0])
    })
    .with_jacobian(|z, _| DMatrix::from_row_slice(2, 2, &[1.0 + 3.0 * z[0] * z[0], -1.0, -1.0, 4.0]))
    .with_split(1)
    .with_solution(dv(&[1.0, 2.0]))?;
    let f: XyVecFn = Arc::new(|x, y, v| dv(&[x[0] + x[0].powi(3) - y[0] + v[0], 4.0 * y[0] - x[0] - 7.0 + v[1]]));
    let f_tilde: XyVecFn = Arc::new(|x, y, v| dv(&[x[0] + x[0].powi(3) - y[0] + v[0]]));
    let jac: XyMatFn = Arc::new(|x, _, _| DMatrix::from_element(1, 1, 1.0 + 3.0 * x[0] * x[0]));
    let h_y: XyMatFn = Arc::new(|_, _, _| DMatrix::from_column_slice(2, 1, &[-1.0, 4.0]));
    let mp = MultistepProblem::new(1, 1, 2, BoxSet::free(2), f, BoxSet::free(1), f_tilde, h_y)?
        .with_inner_jacobian(jac)
        .with_solution(dv(&[1.0]), dv(&[2.0]))?;
    Ok((ge, mp))
}

/// A parametric equation for the probe command with base parameter and
/// start point.
#[derive(Clone, Debug)]
pub struct ParametricProblem {
    pub equation: ParametricEquation,
    pub pbar: DVector<f64>,
    pub x_start: DVector<f64>,
}

pub fn parametric(name: &str) -> Result<ParametricProblem> {
    match name {
        "affine-probe" => Ok(ParametricProblem {
            equation: ParametricEquation::new(BoxSet::free(1), 1, 1, |x, p| dv(&[x[0] - p[0] - 2.0 * p[1]]))
                .with_jacobian(|_, _| DMatrix::from_element(1, 1, 1.0)),
            pbar: dv(&[0.0, 0.0]),
            x_start: dv(&[0.0]),
        }),
        "scalar-eq" => Ok(ParametricProblem {
            equation: ParametricEquation::new(BoxSet::free(2), 1, 1, |z, p| {
                dv(&[2.0 * z[0] + z[1] + p[1], z[0] - p[0]])
            })
            .with_jacobian(|_, _| DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0])),
            pbar: dv(&[1.0, 0.0]),
            x_start: dv(&[0.0, 0.0]),
        }),
        other => {
            let names: Vec<&str> = PARAMETRIC.iter().map(|p| p.name).collect();
            Err(Error::InvalidParameter(format!(
                "unknown parametric problem '{other}'; valid names: {}",
                names.join(", ")
            )))
        }
    }
}

/// Objective of an inline program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InlineObjective {
    /// `½xᵀQx + cᵀx`, `Q` given by rows.
    Quadratic { q: Vec<Vec<f64>>, c: Vec<f64> },
    /// Chained Rosenbrock in `dim` variables.
    Rosenbrock { dim: usize },
}

/// One equality constraint of an inline program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InlineConstraint {
    /// `aᵀx - b = 0`.
    Linear { a: Vec<f64>, b: f64 },
    /// `‖x - center‖² - radius² = 0`.
    Sphere { center: Vec<f64>, radius: f64 },
}

/// A program assembled from registered building blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    pub objective: InlineObjective,
    #[serde(default)]
    pub constraints: Vec<InlineConstraint>,
    /// Box bounds; missing means free. Infinite bounds may be written as
    /// `inf`/`-inf`.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    /// Known KKT point, verified on load.
    pub solution_x: Option<Vec<f64>>,
    pub solution_y: Option<Vec<f64>>,
}

type ObjectiveHessian = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

impl InlineProblem {
    pub fn build(&self) -> Result<Problem> {
        let n = match &self.objective {
            InlineObjective::Quadratic { c, .. } => c.len(),
            InlineObjective::Rosenbrock { dim } => *dim,
        };
        if n == 0 {
            return Err(Error::InvalidParameter("inline problem has no variables".into()));
        }
        let m = self.constraints.len();
        let lower = self.lower.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; n]);
        let upper = self.upper.clone().unwrap_or_else(|| vec![f64::INFINITY; n]);
        check_dim(n, lower.len(), "inline lower bounds")?;
        check_dim(n, upper.len(), "inline upper bounds")?;
        let set = BoxSet::new(lower, upper)?;
        let (h, grad_h, hess_h): (crate::nlp::ScalarFn, crate::nlp::VecFn, ObjectiveHessian) = match &self.objective {
            InlineObjective::Quadratic { q, c } => {
                check_dim(n, q.len(), "inline Q rows")?;
                for row in q {
                    check_dim(n, row.len(), "inline Q cols")?;
                }
                let qm = DMatrix::from_fn(n, n, |i, j| 0.5 * (q[i][j] + q[j][i]));
                let cv = DVector::from_vec(c.clone());
                let (q1, q2, c1, c2) = (qm.clone(), qm.clone(), cv.clone(), cv);
                (
                    Arc::new(move |x, _| 0.5 * x.dot(&(&q1 * x)) + c1.dot(x)),
                    Arc::new(move |x, _| &q2 * x + &c2),
                    Arc::new(move |_| qm.clone()),
                )
            }
            InlineObjective::Rosenbrock { .. } => (
                Arc::new(|x, _| rosenbrock(x)),
                Arc::new(|x, _| rosenbrock_grad(x)),
                Arc::new(rosenbrock_hess),
            ),
        };
        for c in &self.constraints {
            match c {
                InlineConstraint::Linear { a, .. } => check_dim(n, a.len(), "inline linear constraint")?,
                InlineConstraint::Sphere { center, radius } => {
                    check_dim(n, center.len(), "inline sphere center")?;
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidParameter("sphere radius must be positive".into()));
                    }
                }
            }
        }
        let (cg, cj, ch) = (
            self.constraints.clone(),
            self.constraints.clone(),
            self.constraints.clone(),
        );
        let g: crate::nlp::VecFn = Arc::new(move |x, _| {
            DVector::from_iterator(
                cg.len(),
                cg.iter().map(|c| match c {
                    InlineConstraint::Linear { a, b } => DVector::from_column_slice(a).dot(x) - b,
                    InlineConstraint::Sphere { center, radius } => {
                        (x - DVector::from_column_slice(center)).norm_squared() - radius * radius
                    }
                }),
            )
        });
        let jac_g: crate::nlp::MatFn = Arc::new(move |x, _| {
            let mut j = DMatrix::zeros(cj.len(), x.len());
            for (i, c) in cj.iter().enumerate() {
                let row = match c {
                    InlineConstraint::Linear { a, .. } => DVector::from_column_slice(a),
                    InlineConstraint::Sphere { center, .. } => 2.0 * (x - DVector::from_column_slice(center)),
                };
                j.set_row(i, &row.transpose());
            }
            j
        });
        let hess: crate::nlp::HessFn = Arc::new(move |x, y, _| {
            let mut hm = hess_h(x);
            for (i, c) in ch.iter().enumerate() {
                if let InlineConstraint::Sphere { .. } = c {
                    for d in 0..x.len() {
                        hm[(d, d)] += 2.0 * y[i];
                    }
                }
            }
            hm
        });
        let mut nlp = NlpProblem::new(n, m, 0, set, h, grad_h, g, jac_g)?
            .with_hessian(hess)
            .with_perturbation(Perturbation::AdditiveOnG);
        match (&self.solution_x, &self.solution_y) {
            (Some(x), Some(y)) => {
                nlp = nlp.with_solution(DVector::from_column_slice(x), DVector::from_column_slice(y))?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "inline solution needs both solution_x and solution_y".into(),
                ))
            }
        }
        let x0 = self
            .x0
            .clone()
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::zeros(n));
        let y0 = self
            .y0
            .clone()
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::zeros(m));
        check_dim(n, x0.len(), "inline x0")?;
        check_dim(m, y0.len(), "inline y0")?;
        Ok(Problem::Nlp { nlp, x0, y0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn every_registered_problem_builds() {
        for info in PROBLEMS {
            let p = problem(info.name).unwrap();
            assert_eq!(p.kind(), info.kind);
            assert!(p.zbar().is_some(), "{}", info.name);
        }
        for info in PARAMETRIC {
            parametric(info.name).unwrap();
        }
        assert!(problem("nope").is_err());
    }

    #[test]
    fn rosenbrock_circle_hessian() {
        let nlp = rosenbrock_circle().unwrap();
        let (x, y) = nlp.solution().unwrap().clone();
        let h = nlp.hess_lagrangian(&x, &y, &DVector::zeros(1));
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[802.0, -400.0, -400.0, 200.0]));
        let x = dv(&[0.3, -0.7]);
        let fd = linalg::fd_jacobian(rosenbrock_grad, &x, 2);
        assert!((fd - rosenbrock_hess(&x)).amax() < 1e-4);
        let fd = linalg::fd_jacobian(|x| DVector::from_element(1, rosenbrock(x)), &x, 1);
        assert!((fd.transpose() - rosenbrock_grad(&x)).amax() < 1e-5);
    }

    #[test]
    fn box_qp_reference() {
        let nlp = box_qp().unwrap();
        let (x, y) = nlp.solution().unwrap();
        assert!((x - dv(&[0.2, 0.8, 0.0])).amax() < 1e-12);
        assert!((y[0] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn inline_matches_registered() {
        let inline: InlineProblem = toml::from_str(
            r#"
            objective = { kind = "quadratic", q = [[2.0]], c = [0.0] }
            constraints = [{ kind = "linear", a = [1.0], b = 1.0 }]
            solution_x = [1.0]
            solution_y = [-2.0]
            "#,
        )
        .unwrap();
        let Problem::Nlp { nlp, .. } = inline.build().unwrap() else {
            panic!("expected a program")
        };
        let reg = scalar_eq().unwrap();
        let (x, y, v) = (dv(&[0.3]), dv(&[0.7]), dv(&[0.01]));
        assert_eq!(nlp.kkt_map(&nlp.stack(&x, &y), &v), reg.kkt_map(&reg.stack(&x, &y), &v));

        let sphere: InlineProblem = toml::from_str(
            r#"
            objective = { kind = "rosenbrock", dim = 2 }
            constraints = [{ kind = "sphere", center = [0.0, 0.0], radius = 1.4142135623730951 }]
            solution_x = [1.0, 1.0]
            solution_y = [0.0]
            "#,
        )
        .unwrap();
        assert!(sphere.build().is_ok());
    }
}
