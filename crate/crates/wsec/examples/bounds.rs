//! Curvature bound estimates κ̲(a), K̄(a) over parametric density families.

use wsec::bounds::{estimate_k_upper, estimate_kappa_lower, DensityFamily, OptimizerOptions, SampleBudget};
use wsec::catalog;

fn main() -> wsec::Result<()> {
    let budget = SampleBudget::default();
    let opts = OptimizerOptions::default();
    for name in ["sphere", "flat-torus", "hyperbolic"] {
        let spec = catalog::by_name(name).unwrap().spec;
        let family = DensityFamily::default_for(&spec, &budget);
        let lo = estimate_kappa_lower(&spec, &family, 1.0, &budget, &opts)?;
        let hi = estimate_k_upper(&spec, &family, 1.0, &budget, &opts)?;
        println!(
            "{name:>11}: kappa_lower {:+.6} (PWSC phase {}), K_upper {:+.6} (NWSC phase {})",
            lo.value, lo.sign_phase_succeeded, hi.value, hi.sign_phase_succeeded
        );
    }
    println!("({})", wsec::bounds::CAVEAT);
    Ok(())
}
