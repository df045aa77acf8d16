//! Samples the solution map of the parametric scalar-eq KKT system and
//! compares the observed Lipschitz ratios with `ω · lîp`.

use iss_newton::iss::{probe_solution_map, ProbeOptions};
use iss_newton::registry;

fn main() -> iss_newton::Result<()> {
    for name in ["affine-probe", "scalar-eq"] {
        let pp = registry::parametric(name)?;
        let probe = probe_solution_map(&pp.equation, &pp.pbar, &pp.x_start, &ProbeOptions::default())?;
        println!("{name}: x̄ = {:?}", probe.xbar);
        println!(
            "  kappa {:.3}, mu {:.3}, omega {:.3}",
            probe.kappa, probe.mu, probe.omega
        );
        for axis in 0..2 {
            println!(
                "  p{}: max ratio {:.3} <= omega * lip = {:.3}",
                axis + 1,
                probe.max_ratio[axis],
                probe.omega * probe.lip_f[axis]
            );
        }
        println!("  bound holds: {}", probe.bound_holds());
    }
    Ok(())
}
