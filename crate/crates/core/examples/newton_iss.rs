//! Perturbed Josephy-Newton on the box-constrained QP: fits ISS gains per
//! disturbance level and checks that the iterates settle inside the
//! predicted ball.

use iss_newton::geneq::{run_newton, Linearization, NewtonConfig};
use iss_newton::iss::{ball_containment, estimate_iss_gains, BallOptions, DisturbanceSequence};
use iss_newton::registry;

fn main() -> iss_newton::Result<()> {
    let nlp = registry::box_qp()?;
    let ge = nlp.kkt_equation().additive_on_f();
    let zbar = nlp.zbar().expect("box-qp has a known solution");
    let z0 = nlp.stack(
        &nalgebra::DVector::from_element(3, 1.0 / 3.0),
        &nalgebra::DVector::zeros(1),
    );
    let cfg = NewtonConfig::default();

    let mut runs = Vec::new();
    for delta in [1e-4, 1e-3, 1e-2] {
        for seed in 0..3 {
            let dist = DisturbanceSequence::random_bounded(delta, seed)?;
            let trace = run_newton(&ge, &Linearization::ExactGradient, &z0, &dist, &cfg)?;
            let est = estimate_iss_gains(&trace, &zbar)?;
            println!(
                "delta {delta:.0e} seed {seed}: alpha {:.2} gamma {:.3} final error {:.2e}",
                est.alpha,
                est.gamma,
                trace.errors(&zbar).last().unwrap()
            );
            runs.push((trace, dist.sup_norm(), est.asymptotic_gain()));
        }
    }
    let gain = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    let pairs: Vec<_> = runs.iter().map(|(t, s, _)| (t, *s)).collect();
    let report = ball_containment(&pairs, &zbar, gain, &BallOptions::default());
    println!(
        "all runs inside the ball of radius {gain:.3} * delta: {}",
        report.all_pass
    );
    for (lo, hi, ratio) in &report.level_ratios {
        println!("asymptotic error ratio {hi:.0e} / {lo:.0e}: {ratio:.2}");
    }
    Ok(())
}
