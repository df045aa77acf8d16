//! Solves a small mixed AVI by semismooth Newton and checks the answer
//! against exhaustive active-set enumeration.

use iss_newton::geometry::BoxSet;
use iss_newton::subproblem::{
    estimate_kappa, pattern_string, solution_pattern, solve_avi_enumerate, solve_avi_semismooth, MixedAvi,
};
use nalgebra::{DMatrix, DVector};

fn main() -> iss_newton::Result<()> {
    let inf = f64::INFINITY;
    let set = BoxSet::new(vec![0.0, -inf, -1.0], vec![inf, 0.5, 1.0])?;
    let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, -1.0, 3.0, 1.0, 0.0, -1.0, 2.0]);
    let avi = MixedAvi::new(DVector::from_column_slice(&[1.0, -1.0, 0.5]), m, set)?;

    let z = solve_avi_semismooth(&avi, &DVector::zeros(3), 1e-13, 50)?;
    let oracle = solve_avi_enumerate(&avi)?;
    println!("semismooth:  {:?}", z.as_slice());
    println!(
        "enumeration: {:?} ({} patterns, unique = {})",
        oracle.solutions[0].as_slice(),
        oracle.patterns_examined,
        oracle.is_unique()
    );
    println!(
        "pattern at the solution: {}",
        pattern_string(&solution_pattern(&avi, &z, 1e-9))
    );

    let reg = estimate_kappa(&avi, &z, 0.1, 200, 0)?;
    println!(
        "sampled kappa {:.4}, largest pattern inverse norm {:.4}",
        reg.kappa,
        reg.max_pattern_inverse_norm()
    );
    Ok(())
}
