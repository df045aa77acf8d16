//! Quasi-Newton SQP on the Rosenbrock-circle program: BFGS and DFP
//! against exact-Hessian SQP, tracking `‖z_k - z̄‖ + ‖B_k - ∇²L(z̄)‖`.

use iss_newton::geneq::{Linearization, NewtonConfig};
use iss_newton::iss::DisturbanceSequence;
use iss_newton::nlp::{run_kkt_newton, run_sqp, BroydenFamily, SqpConfig};
use iss_newton::registry;
use nalgebra::DVector;

fn main() -> iss_newton::Result<()> {
    let nlp = registry::rosenbrock_circle()?;
    let (x0, y0) = (DVector::from_column_slice(&[1.02, 0.98]), DVector::zeros(1));
    let (xbar, ybar) = nlp.solution().cloned().expect("known solution");
    let hbar = nlp.hess_lagrangian(&xbar, &ybar, &DVector::zeros(1));
    let zero = DisturbanceSequence::zero();

    let exact = run_kkt_newton(
        &nlp,
        &Linearization::SqpHessian {
            primal_dim: 2,
            hessian: None,
        },
        &x0,
        &y0,
        &zero,
        &NewtonConfig::default(),
    )?;
    println!(
        "exact SQP: {} steps, residual {:.1e}",
        exact.steps(),
        exact.final_residual()
    );

    for family in [BroydenFamily::Bfgs, BroydenFamily::Dfp] {
        let cfg = SqpConfig {
            family,
            ..SqpConfig::default()
        };
        let run = run_sqp(&nlp, &x0, &y0, Some(hbar.clone()), &zero, &cfg)?;
        let measure = run.combined_measure().unwrap();
        println!(
            "{family:?}: {} steps, residual {:.1e}, {} skipped updates",
            run.trace.steps(),
            run.trace.final_residual(),
            run.final_hessian.skipped
        );
        let shown: Vec<String> = measure.iter().map(|m| format!("{m:.2e}")).collect();
        println!("  combined measure: {}", shown.join(" "));
    }
    Ok(())
}
