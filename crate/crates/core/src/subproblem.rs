//! Mixed affine variational inequalities `a + M z + N_C(z) ∋ 0` over boxes.
//!
//! Every Newton step reduces to one of these. [`solve_avi_semismooth`] is the
//! production solver (semismooth Newton on the natural residual);
//! [`solve_avi_enumerate`] is an exhaustive active-set oracle used to certify
//! solutions and detect non-uniqueness.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{natural_residual, normal_cone_contains, BoxSet};
use crate::linalg;

/// Largest number of active-set patterns the enumeration oracle will visit
/// (`3^8`).
pub const MAX_PATTERNS: u128 = 6561;

/// Distance below which two enumerated solutions are considered equal.
pub const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedAvi {
    pub a: DVector<f64>,
    pub m: DMatrix<f64>,
    pub set: BoxSet,
}

impl MixedAvi {
    pub fn new(a: DVector<f64>, m: DMatrix<f64>, set: BoxSet) -> Result<Self> {
        check_dim(set.dim(), a.len(), "MixedAvi vector a")?;
        check_dim(set.dim(), m.nrows(), "MixedAvi matrix rows")?;
        check_dim(set.dim(), m.ncols(), "MixedAvi matrix cols")?;
        Ok(Self { a, m, set })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `a + M z`.
    pub fn value(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a + &self.m * z
    }

    pub fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        natural_residual(z, &self.value(z), &self.set)
    }

    /// Whether `-(a + M z) ∈ N_C(z)` within `tol`.
    pub fn certifies(&self, z: &DVector<f64>, tol: f64) -> bool {
        normal_cone_contains(&self.set, z, &(-self.value(z)), tol)
            .map(|c| c.is_member())
            .unwrap_or(false)
    }

    /// Same problem with the right-hand side shifted: `a - δ + M z + N_C(z) ∋ 0`,
    /// i.e. `(a + M z + N_C)(z) ∋ δ`.
    pub fn shifted(&self, delta: &DVector<f64>) -> MixedAvi {
        MixedAvi {
            a: &self.a - delta,
            m: self.m.clone(),
            set: self.set.clone(),
        }
    }
}

/// Status of a component in an active-set pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    Inactive,
    Lower,
    Upper,
}

impl Activity {
    fn symbol(self) -> char {
        match self {
            Activity::Inactive => 'I',
            Activity::Lower => 'L',
            Activity::Upper => 'U',
        }
    }
}

pub fn pattern_string(pattern: &[Activity]) -> String {
    pattern.iter().map(|a| a.symbol()).collect()
}

/// Generalized Newton direction of the natural residual at `z`.
fn semismooth_direction(p: &MixedAvi, z: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let n = p.dim();
    let (lower, upper) = (p.set.lower(), p.set.upper());
    let w = p.value(z);
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut pattern = Vec::with_capacity(n);
    for i in 0..n {
        let t = z[i] - w[i];
        // ties at a bound take the inactive row: on a solution's face this
        // keeps the reduced system of the piece the iterate sits on
        let act = if p.set.is_fixed(i) || t < lower[i] {
            Activity::Lower
        } else if t > upper[i] {
            Activity::Upper
        } else {
            Activity::Inactive
        };
        if act == Activity::Inactive {
            g.set_row(i, &p.m.row(i));
        } else {
            g[(i, i)] = 1.0;
        }
        pattern.push(act);
    }
    linalg::solve(&g, &(-r)).ok_or_else(|| Error::SingularPattern {
        pattern: pattern_string(&pattern),
    })
}

/// Semismooth Newton on `r(z) = z - P_C(z - a - M z)`.
///
/// The generalized Jacobian takes row `M_i` where `z_i - w_i` lies strictly
/// inside `(l_i, u_i)` and `e_i` otherwise. Steps are halved while the residual
/// norm fails to decrease. Once the tolerance is met, one more full step is
/// taken and kept if it does not increase the residual; on the final active
/// set this solves the piece exactly.
pub fn solve_avi_semismooth(p: &MixedAvi, z0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    check_dim(p.dim(), z0.len(), "semismooth start point")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("semismooth start point"));
    }
    let mut z = z0.clone();
    let mut r = p.residual(&z)?;
    let mut rnorm = r.norm();
    for _ in 0..max_iter {
        if rnorm <= tol {
            break;
        }
        let d = semismooth_direction(p, &z, &r)?;
        let mut step = 1.0;
        loop {
            let trial = &z + step * &d;
            let r_trial = p.residual(&trial)?;
            let n_trial = r_trial.norm();
            if n_trial < rnorm {
                z = trial;
                r = r_trial;
                rnorm = n_trial;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::MaxIterExceeded {
                    iterations: max_iter,
                    residual: rnorm,
                });
            }
        }
    }
    if rnorm > tol {
        return Err(Error::MaxIterExceeded {
            iterations: max_iter,
            residual: rnorm,
        });
    }
    if rnorm > 0.0 {
        if let Ok(d) = semismooth_direction(p, &z, &r) {
            let trial = &z + d;
            if p.residual(&trial)?.norm() <= rnorm {
                z = trial;
            }
        }
    }
    Ok(z)
}

/// Result of exhaustive active-set enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct AviEnumeration {
    /// Distinct solutions (pairwise distance ≥ [`DEDUP_TOL`]).
    pub solutions: Vec<DVector<f64>>,
    /// Patterns whose reduced linear system was singular; such patterns may
    /// hide a continuum of solutions.
    pub singular_patterns: Vec<String>,
    pub patterns_examined: usize,
}

impl AviEnumeration {
    pub fn is_unique(&self) -> bool {
        self.solutions.len() == 1 && self.singular_patterns.is_empty()
    }
}

fn options_for(set: &BoxSet, i: usize) -> Vec<Activity> {
    if set.is_fixed(i) {
        return vec![Activity::Lower];
    }
    let mut opts = vec![Activity::Inactive];
    if set.lower()[i].is_finite() {
        opts.push(Activity::Lower);
    }
    if set.upper()[i].is_finite() {
        opts.push(Activity::Upper);
    }
    opts
}

/// Number of active-set patterns [`solve_avi_enumerate`] would visit.
pub fn pattern_count(set: &BoxSet) -> u128 {
    (0..set.dim())
        .map(|i| options_for(set, i).len() as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX)
}

/// Enumerates every at-lower / at-upper / inactive pattern, solves the reduced
/// linear system and keeps the candidates that satisfy the normal-cone sign
/// conditions.
pub fn solve_avi_enumerate(p: &MixedAvi) -> Result<AviEnumeration> {
    let count = pattern_count(&p.set);
    if count > MAX_PATTERNS {
        return Err(Error::DimensionTooLarge {
            patterns: count,
            limit: MAX_PATTERNS,
        });
    }
    let n = p.dim();
    let options: Vec<Vec<Activity>> = (0..n).map(|i| options_for(&p.set, i)).collect();
    let scale = 1.0 + p.a.amax() + p.m.amax();
    let tol = 1e-9 * scale;
    let mut counter = vec![0usize; n];
    let mut out = AviEnumeration {
        solutions: Vec::new(),
        singular_patterns: Vec::new(),
        patterns_examined: 0,
    };
    loop {
        let pattern: Vec<Activity> = counter.iter().enumerate().map(|(i, &c)| options[i][c]).collect();
        out.patterns_examined += 1;
        match solve_pattern(p, &pattern) {
            Some(z) => {
                if accept_candidate(p, &z, &pattern, tol) && out.solutions.iter().all(|s| (s - &z).norm() >= DEDUP_TOL)
                {
                    out.solutions.push(z);
                }
            }
            None => out.singular_patterns.push(pattern_string(&pattern)),
        }
        // mixed-radix increment
        let mut i = 0;
        loop {
            if i == n {
                return Ok(out);
            }
            counter[i] += 1;
            if counter[i] < options[i].len() {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

/// Solves the reduced system of a pattern; `None` when it is singular.
fn solve_pattern(p: &MixedAvi, pattern: &[Activity]) -> Option<DVector<f64>> {
    let n = p.dim();
    let mut z = DVector::zeros(n);
    let mut inactive = Vec::new();
    for (i, act) in pattern.iter().enumerate() {
        match act {
            Activity::Lower => z[i] = p.set.lower()[i],
            Activity::Upper => z[i] = p.set.upper()[i],
            Activity::Inactive => inactive.push(i),
        }
    }
    if inactive.is_empty() {
        return Some(z);
    }
    let k = inactive.len();
    let mut m_ii = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (r, &i) in inactive.iter().enumerate() {
        let mut acc = -p.a[i];
        for j in 0..n {
            if pattern[j] != Activity::Inactive {
                acc -= p.m[(i, j)] * z[j];
            }
        }
        rhs[r] = acc;
        for (c, &j) in inactive.iter().enumerate() {
            m_ii[(r, c)] = p.m[(i, j)];
        }
    }
    let zi = linalg::solve(&m_ii, &rhs)?;
    for (r, &i) in inactive.iter().enumerate() {
        z[i] = zi[r];
    }
    Some(z)
}

fn accept_candidate(p: &MixedAvi, z: &DVector<f64>, pattern: &[Activity], tol: f64) -> bool {
    if !p.set.contains(z, tol) {
        return false;
    }
    let w = p.value(z);
    pattern.iter().enumerate().all(|(i, act)| match act {
        Activity::Inactive => w[i].abs() <= tol,
        Activity::Lower if p.set.is_fixed(i) => true,
        Activity::Lower => w[i] >= -tol,
        Activity::Upper => w[i] <= tol,
    })
}

/// Active-set pattern of a solution: bound-active where the component sits
/// on a bound with a nonzero multiplier, inactive otherwise (weakly active
/// components count as inactive).
pub fn solution_pattern(p: &MixedAvi, z: &DVector<f64>, tol: f64) -> Vec<Activity> {
    let w = p.value(z);
    (0..p.dim())
        .map(|i| {
            let l = p.set.lower()[i];
            let u = p.set.upper()[i];
            if p.set.is_fixed(i) || ((z[i] - l).abs() <= tol && w[i].abs() > tol) {
                Activity::Lower
            } else if (u - z[i]).abs() <= tol && w[i].abs() > tol {
                Activity::Upper
            } else {
                Activity::Inactive
            }
        })
        .collect()
}

/// `‖(M_II)⁻¹‖₂` for the inactive index set of `pattern`: the Lipschitz
/// constant of the solution map while the pattern is unchanged.
pub fn pattern_inverse_norm(m: &DMatrix<f64>, pattern: &[Activity]) -> f64 {
    let inactive: Vec<usize> = (0..pattern.len())
        .filter(|&i| pattern[i] == Activity::Inactive)
        .collect();
    let k = inactive.len();
    let sub = DMatrix::from_fn(k, k, |r, c| m[(inactive[r], inactive[c])]);
    linalg::inverse_norm(&sub)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternInverse {
    pub pattern: String,
    pub inverse_norm: f64,
}

/// Sampled estimate of the strong-regularity constant around a solution.
/// This is a lower bound on the true localization constant, not a
/// certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityEstimate {
    /// `max ‖z(δ) - z̄‖ / ‖δ‖` over the samples.
    pub kappa: f64,
    pub radius: f64,
    pub samples: usize,
    /// Active-set patterns met while probing, with `‖(M_II)⁻¹‖`.
    pub certificate: Vec<PatternInverse>,
}

impl RegularityEstimate {
    pub fn max_pattern_inverse_norm(&self) -> f64 {
        self.certificate.iter().map(|c| c.inverse_norm).fold(0.0, f64::max)
    }

    /// The larger of the sampled ratio and the pattern inverse norms.
    pub fn kappa_upper(&self) -> f64 {
        self.kappa.max(self.max_pattern_inverse_norm())
    }
}

/// Perturbs the right-hand side by random `δ` with `‖δ‖ ≤ radius`, re-solves
/// and records the largest displacement ratio.
pub fn estimate_kappa(
    p: &MixedAvi,
    zbar: &DVector<f64>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<RegularityEstimate> {
    check_dim(p.dim(), zbar.len(), "estimate_kappa base point")?;
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let base_res = p.residual(zbar)?.norm();
    if base_res > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "base point is not a solution (residual {base_res:e})"
        )));
    }
    let n = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappa: f64 = 0.0;
    let mut certificate: Vec<PatternInverse> = Vec::new();
    let record = |z: &DVector<f64>, cert: &mut Vec<PatternInverse>| {
        let pat = pattern_string(&solution_pattern(p, z, 1e-9));
        if cert.iter().all(|c| c.pattern != pat) {
            let inv = pattern_inverse_norm(&p.m, &solution_pattern(p, z, 1e-9));
            cert.push(PatternInverse {
                pattern: pat,
                inverse_norm: inv,
            });
        }
    };
    record(zbar, &mut certificate);
    for _ in 0..samples {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dn = dir.norm();
        if dn == 0.0 {
            continue;
        }
        let scale = radius * rng.random_range(0.05..=1.0);
        let delta = dir * (scale / dn);
        let z = solve_avi_semismooth(&p.shifted(&delta), zbar, 1e-13 * (1.0 + scale), 100)?;
        kappa = kappa.max((&z - zbar).norm() / delta.norm());
        record(&z, &mut certificate);
    }
    Ok(RegularityEstimate {
        kappa,
        radius,
        samples,
        certificate,
    })
}
