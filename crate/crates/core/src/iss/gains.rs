use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geneq::Trace;

/// Resolution of the contraction-factor grid `{0.01, …, 0.99}`.
pub const ALPHA_GRID_STEP: f64 = 0.01;

/// Errors below this value are treated as exact zeros.
const ERROR_FLOOR: f64 = 1e-14;

/// A step where `e_{k+1} ≤ α e_k + γ ‖v_k‖` cannot hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Linear ISS pair `(α, γ)` with `e_{k+1} ≤ α e_k + γ ‖v_k‖` on every step of
/// the fitted window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IssEstimate {
    pub alpha: f64,
    pub gamma: f64,
    pub feasible: bool,
    pub violation_witness: Option<Witness>,
}

impl IssEstimate {
    /// `γ / (1 - α)`: radius of the limiting ball per unit of `‖v‖∞`.
    pub fn asymptotic_gain(&self) -> f64 {
        self.gamma / (1.0 - self.alpha)
    }
}

fn minimal_gamma(errors: &[f64], vnorms: &[f64], alpha: f64) -> std::result::Result<f64, Witness> {
    let mut gamma: f64 = 0.0;
    for (k, &vn) in vnorms.iter().enumerate() {
        let (ek, ek1) = (errors[k], errors[k + 1]);
        let excess = ek1 - alpha * ek;
        if vn > 0.0 {
            gamma = gamma.max(excess / vn);
        } else if excess > ERROR_FLOOR {
            return Err(Witness {
                k,
                lhs: ek1,
                rhs: alpha * ek,
            });
        }
    }
    Ok(gamma)
}

/// Fits `(α, γ)` to an error sequence `e_0, …, e_N` and disturbance norms
/// `‖v_0‖, …, ‖v_{N-1}‖`.
///
/// For each `α` on the grid the smallest admissible `γ` is computed; among
/// feasible pairs the one with the smallest asymptotic gain `γ/(1-α)` is
/// returned, ties going to the smaller `α`.
pub fn estimate_iss_gains_from(errors: &[f64], vnorms: &[f64]) -> Result<IssEstimate> {
    if errors.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 iterates, got {}",
            errors.len()
        )));
    }
    if vnorms.len() + 1 != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: errors.len() - 1,
            got: vnorms.len(),
            context: "disturbance norms per step",
        });
    }
    let mut best: Option<IssEstimate> = None;
    let mut last_witness = None;
    for i in 1..=99 {
        let alpha = i as f64 * ALPHA_GRID_STEP;
        match minimal_gamma(errors, vnorms, alpha) {
            Ok(gamma) => {
                let cand = IssEstimate {
                    alpha,
                    gamma,
                    feasible: true,
                    violation_witness: None,
                };
                let better = match &best {
                    None => true,
                    Some(b) => cand.asymptotic_gain() < b.asymptotic_gain() * (1.0 - 1e-12),
                };
                if better {
                    best = Some(cand);
                }
            }
            Err(w) => last_witness = Some(w),
        }
    }
    Ok(best.unwrap_or(IssEstimate {
        alpha: 99.0 * ALPHA_GRID_STEP,
        gamma: f64::INFINITY,
        feasible: false,
        violation_witness: last_witness,
    }))
}

fn trace_series(trace: &Trace, zbar: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    (trace.errors(zbar), trace.disturbance_norms())
}

/// Fits `V(z_{k+1}) ≤ α V(z_k) + γ ‖v_k‖` with `V(z) = ‖z - z̄‖` over the
/// whole trace.
pub fn estimate_iss_gains(trace: &Trace, zbar: &DVector<f64>) -> Result<IssEstimate> {
    let (e, v) = trace_series(trace, zbar);
    estimate_iss_gains_from(&e, &v)
}

/// Same as [`estimate_iss_gains`] on the steps from `start` onwards.
pub fn estimate_iss_gains_window(trace: &Trace, zbar: &DVector<f64>, start: usize) -> Result<IssEstimate> {
    let (e, v) = trace_series(trace, zbar);
    if start >= v.len() {
        return Err(Error::InsufficientData(format!(
            "window start {start} beyond {} steps",
            v.len()
        )));
    }
    estimate_iss_gains_from(&e[start..], &v[start..])
}

/// Result of [`fit_quadratic_rate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticFit {
    /// `max (e_{k+1} - κ̂ e_k ‖v_k‖) / e_k²` over the window, clipped at 0.
    pub c: f64,
    /// Per-step gains `γ_k = κ̂ e_k` of the window steps.
    pub gammas: Vec<f64>,
    pub steps: usize,
    /// Largest one-step ratio `e_{k+1} / e_k` in the window.
    pub linear_factor: f64,
    /// False when the window behaves linearly rather than quadratically
    /// (`c · min e_k ≥ linear_factor / 2`).
    pub quadratic: bool,
}

/// Fits the constant `c` of `e_{k+1} ≤ c e_k² + κ̂ e_k ‖v_k‖` over steps whose
/// error lies in `window = [lo, hi]`.
pub fn fit_quadratic_rate(
    trace: &Trace,
    zbar: &DVector<f64>,
    window: (f64, f64),
    kappa_hat: f64,
) -> Result<QuadraticFit> {
    fit_quadratic_rate_pooled(&[trace], zbar, window, kappa_hat)
}

/// [`fit_quadratic_rate`] over the window steps of several traces. Steps
/// whose successor error is below `1e-14` are rounding noise and skipped. A single
/// quadratically convergent trace rarely has three errors inside a narrow
/// window, so fits are usually pooled over a few starts.
pub fn fit_quadratic_rate_pooled(
    traces: &[&Trace],
    zbar: &DVector<f64>,
    window: (f64, f64),
    kappa_hat: f64,
) -> Result<QuadraticFit> {
    let (lo, hi) = window;
    let mut c: f64 = 0.0;
    let mut linear_factor: f64 = 0.0;
    let mut gammas = Vec::new();
    let mut e_min = f64::INFINITY;
    for trace in traces {
        let (e, v) = trace_series(trace, zbar);
        // successors at the rounding floor carry no rate information
        for k in (0..v.len()).filter(|&k| e[k] >= lo && e[k] <= hi && e[k + 1] > ERROR_FLOOR) {
            let gk = kappa_hat * e[k];
            gammas.push(gk);
            c = c.max((e[k + 1] - gk * v[k]) / (e[k] * e[k]));
            linear_factor = linear_factor.max(e[k + 1] / e[k]);
            e_min = e_min.min(e[k]);
        }
    }
    if gammas.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} steps with error in [{lo:e}, {hi:e}], need 3",
            gammas.len()
        )));
    }
    Ok(QuadraticFit {
        c,
        steps: gammas.len(),
        gammas,
        linear_factor,
        quadratic: c * e_min < 0.5 * linear_factor,
    })
}

/// Steps violating `e_{k+1} ≤ c e_k² + κ̂ e_k ‖v_k‖ (1 + slack)`.
pub fn quadratic_bound_violations(errors: &[f64], vnorms: &[f64], c: f64, kappa_hat: f64, slack: f64) -> Vec<Witness> {
    vnorms
        .iter()
        .enumerate()
        .filter_map(|(k, &vn)| {
            let rhs = (c * errors[k] * errors[k] + kappa_hat * errors[k] * vn) * (1.0 + slack) + ERROR_FLOOR;
            (errors[k + 1] > rhs).then_some(Witness {
                k,
                lhs: errors[k + 1],
                rhs,
            })
        })
        .collect()
}

/// Limsup proxy: the largest error over the final `tail_fraction` of the
/// sequence.
pub fn asymptotic_error(errors: &[f64], tail_fraction: f64) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    let start = ((errors.len() as f64) * (1.0 - tail_fraction)).floor() as usize;
    let start = start.min(errors.len() - 1);
    errors[start..].iter().copied().fold(0.0, f64::max)
}

/// Checks `e_k ≤ α^k e_0 + γ ‖v‖∞ / (1 - α)` for every `k`.
pub fn iss_bound_certificate(errors: &[f64], sup_norm: f64, est: &IssEstimate) -> bool {
    if !est.feasible || errors.is_empty() {
        return false;
    }
    let e0 = errors[0];
    let offset = est.gamma * sup_norm / (1.0 - est.alpha);
    errors.iter().enumerate().all(|(k, &ek)| {
        let bound = est.alpha.powi(k as i32) * e0 + offset;
        ek <= bound * (1.0 + 1e-9) + ERROR_FLOOR
    })
}

/// Median of the one-step ratios `e_{k+1} / e_k` over steps with
/// `e_k > floor` and `e_{k+1} > floor`.
pub fn observed_rate(errors: &[f64], floor: f64) -> Option<f64> {
    let mut ratios: Vec<f64> = errors
        .windows(2)
        .filter(|w| w[0] > floor && w[1] > floor)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    Some(if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    })
}

/// Settings of [`ball_containment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallOptions {
    /// Relative slack on `γ̂ ‖v‖∞`.
    pub slack: f64,
    /// Fraction of the trace used as the limsup proxy.
    pub tail_fraction: f64,
    /// Error allowed for undisturbed traces.
    pub tol: f64,
}

impl Default for BallOptions {
    fn default() -> Self {
        Self {
            slack: 0.1,
            tail_fraction: 0.25,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallEntry {
    pub sup_norm: f64,
    pub asymptotic_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Outcome of [`ball_containment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallReport {
    pub entries: Vec<BallEntry>,
    /// `(lower level, upper level, mean error at upper / mean error at lower)`
    /// for adjacent disturbance levels.
    pub level_ratios: Vec<(f64, f64, f64)>,
    pub all_pass: bool,
}

/// Checks that each trace ends in the ball of radius `γ̂ ‖v‖∞` around `z̄`
/// and reports how the asymptotic error scales across disturbance levels.
pub fn ball_containment(runs: &[(&Trace, f64)], zbar: &DVector<f64>, gamma_hat: f64, opts: &BallOptions) -> BallReport {
    let entries: Vec<BallEntry> = runs
        .iter()
        .map(|(trace, sup)| {
            let asym = asymptotic_error(&trace.errors(zbar), opts.tail_fraction);
            let bound = if *sup > 0.0 {
                gamma_hat * sup * (1.0 + opts.slack)
            } else {
                opts.tol
            };
            BallEntry {
                sup_norm: *sup,
                asymptotic_error: asym,
                bound,
                pass: asym <= bound,
            }
        })
        .collect();
    let mut levels: Vec<(f64, f64, usize)> = Vec::new();
    for e in &entries {
        match levels.iter_mut().find(|l| l.0 == e.sup_norm) {
            Some(l) => {
                l.1 += e.asymptotic_error;
                l.2 += 1;
            }
            None => levels.push((e.sup_norm, e.asymptotic_error, 1)),
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let means: Vec<(f64, f64)> = levels.iter().map(|l| (l.0, l.1 / l.2 as f64)).collect();
    let level_ratios = means
        .windows(2)
        .filter(|w| w[0].0 > 0.0)
        .map(|w| (w[0].0, w[1].0, w[1].1 / w[0].1))
        .collect();
    BallReport {
        all_pass: entries.iter().all(|e| e.pass),
        entries,
        level_ratios,
    }
}
