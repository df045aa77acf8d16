//! Generalized boxes `[l, u]` with possibly infinite bounds, their Euclidean
//! projection, normal-cone membership and the natural residual of
//! `0 ∈ f(z) + N_C(z)`.
//!
//! A component with `l = -∞, u = +∞` is free (normal cone `{0}`); a component
//! with `l = u` is fixed (normal cone `ℝ`). The product `C × ℝ^m` used by KKT
//! systems is a box whose trailing components are free.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Default tolerance for membership tests.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Closed box `{ x : lower ≤ x ≤ upper }` in `ℝ^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len(), "box bounds")?;
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidBounds {
                    index,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `ℝ^n`.
    pub fn free(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// `[0, ∞)^n`.
    pub fn nonnegative(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// `[lower, upper]^n`.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> BoxSet {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        BoxSet { lower, upper }
    }

    /// Components `range` of the box.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BoxSet {
        BoxSet {
            lower: self.lower[range.clone()].to_vec(),
            upper: self.upper[range].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.lower[i] == f64::NEG_INFINITY && self.upper[i] == f64::INFINITY
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    /// Number of components with at least one finite bound.
    pub fn bounded_count(&self) -> usize {
        (0..self.dim()).filter(|&i| !self.is_free(i)).count()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, &xi)| xi >= self.lower[i] - tol && xi <= self.upper[i] + tol)
    }

    /// Euclidean projection onto the box.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len(), "project_box")?;
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, &xi)| xi.max(self.lower[i]).min(self.upper[i])),
        ))
    }
}

/// Componentwise projection of `x` onto `set`.
pub fn project_box(x: &DVector<f64>, set: &BoxSet) -> Result<DVector<f64>> {
    set.project(x)
}

/// Outcome of a normal-cone membership test `w ∈ N_C(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalConeCertificate {
    pub point: DVector<f64>,
    pub direction: DVector<f64>,
    /// Largest componentwise violation; `≤ tol` iff membership holds.
    /// `+∞` when the point lies outside the box.
    pub margin: f64,
    pub feasible: bool,
    pub tol: f64,
}

impl NormalConeCertificate {
    pub fn is_member(&self) -> bool {
        self.feasible && self.margin <= self.tol
    }
}

/// Decides `w ∈ N_C(x)` componentwise. At a lower bound the cone is
/// `(-∞, 0]`, at an upper bound `[0, ∞)`, in the interior `{0}`, and `ℝ` for a
/// fixed component.
pub fn normal_cone_contains(
    set: &BoxSet,
    x: &DVector<f64>,
    w: &DVector<f64>,
    tol: f64,
) -> Result<NormalConeCertificate> {
    check_dim(set.dim(), x.len(), "normal_cone_contains point")?;
    check_dim(set.dim(), w.len(), "normal_cone_contains direction")?;
    let feasible = set.contains(x, tol);
    let mut margin = f64::NEG_INFINITY;
    if !feasible {
        margin = f64::INFINITY;
    } else {
        for i in 0..set.dim() {
            let at_lower = (x[i] - set.lower[i]).abs() <= tol;
            let at_upper = (set.upper[i] - x[i]).abs() <= tol;
            let violation = match (at_lower, at_upper) {
                (true, true) => continue,
                (true, false) => w[i],
                (false, true) => -w[i],
                (false, false) => w[i].abs(),
            };
            margin = margin.max(violation);
        }
    }
    Ok(NormalConeCertificate {
        point: x.clone(),
        direction: w.clone(),
        margin,
        feasible,
        tol,
    })
}

/// Natural residual `z - P_C(z - f(z))`; zero exactly when `-f(z) ∈ N_C(z)`.
pub fn natural_residual(z: &DVector<f64>, fz: &DVector<f64>, set: &BoxSet) -> Result<DVector<f64>> {
    check_dim(set.dim(), z.len(), "natural_residual point")?;
    check_dim(set.dim(), fz.len(), "natural_residual value")?;
    Ok(z - set.project(&(z - fz))?)
}

/// `‖x‖ + ‖y‖` for `v = (x, y)` split after `split` components, or the
/// Euclidean norm when `split` is `None`.
pub fn product_norm(v: &DVector<f64>, split: Option<usize>) -> f64 {
    match split {
        Some(n) if n < v.len() => v.rows(0, n).norm() + v.rows(n, v.len() - n).norm(),
        _ => v.norm(),
    }
}
