//! The augmented Lagrangian method as a two-block multistep iteration:
//! contraction of the multiplier error against the penalty, and a generic
//! multistep run with inexact inner solves.

use iss_newton::iss::DisturbanceSequence;
use iss_newton::multistep::{run_multistep, InnerMode, MultistepConfig};
use iss_newton::nlp::{run_alm, AlmConfig};
use iss_newton::registry;
use nalgebra::DVector;

fn main() -> iss_newton::Result<()> {
    let nlp = registry::scalar_eq()?;
    let (x0, y0) = (DVector::zeros(1), DVector::zeros(1));
    println!("rho    rate    steps  max |closed form - inclusion|");
    for rho in [2.0, 5.0, 10.0, 50.0, 100.0] {
        let cfg = AlmConfig {
            rho,
            ..AlmConfig::default()
        };
        let run = run_alm(&nlp, &x0, &y0, &DisturbanceSequence::zero(), &cfg)?;
        let ybar = -2.0;
        let ys: Vec<f64> = run.trace().iterates.iter().map(|z| (z[1] - ybar).abs()).collect();
        let discrepancy = run.dual_update_discrepancy.iter().copied().fold(0.0, f64::max);
        println!(
            "{rho:<6} {:.4}  {:<6} {discrepancy:.1e}",
            ys[1] / ys[0],
            run.trace().steps()
        );
    }

    let (_, mp) = registry::coupled_cubic()?;
    for inner in [
        InnerMode::Exact,
        InnerMode::NewtonSteps(1),
        InnerMode::Noise { sigma: 1e-6, seed: 3 },
    ] {
        let cfg = MultistepConfig {
            inner,
            max_iter: 60,
            ..MultistepConfig::default()
        };
        let run = run_multistep(
            &mp,
            &DVector::from_element(1, 1.3),
            &DVector::from_element(1, 2.2),
            &DisturbanceSequence::zero(),
            &cfg,
        )?;
        let err = run.trace.errors(&DVector::from_column_slice(&[1.0, 2.0]));
        println!(
            "coupled-cubic, inner {inner:?}: {:?} after {} steps, error {:.2e}",
            run.trace.termination,
            run.trace.steps(),
            err.last().unwrap()
        );
    }
    Ok(())
}
