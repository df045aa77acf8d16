//! Empirical input-to-state-stability laboratory: disturbance generators,
//! gain and rate estimators over iterate traces, and solution-map probing.

mod disturbance;
mod gains;
mod probe;

pub use disturbance::{DisturbanceKind, DisturbanceSequence, DisturbanceStream};
pub use gains::{
    asymptotic_error, ball_containment, estimate_iss_gains, estimate_iss_gains_from, estimate_iss_gains_window,
    fit_quadratic_rate, fit_quadratic_rate_pooled, iss_bound_certificate, observed_rate, quadratic_bound_violations,
    BallEntry, BallOptions, BallReport, IssEstimate, QuadraticFit, Witness, ALPHA_GRID_STEP,
};
pub use probe::{probe_solution_map, ParametricEquation, ProbeOptions, SolutionMapProbe};
