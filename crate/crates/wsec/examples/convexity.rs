//! Weighted convexity of h∘r on the hyperbolic plane.

use wsec::catalog;
use wsec::comparison::{build_modified_distance, sample_tilde_geodesics, weighted_convexity_check, ConvexityOptions};

fn main() -> wsec::Result<()> {
    let profile = build_modified_distance(0.0, 5.0)?;
    println!("profile residual {:.2e}", profile.residual());
    let hyp = catalog::by_name("hyperbolic").unwrap().spec;
    let geods = sample_tilde_geodesics(&hyp, &[0.0, 0.0], 0.4, 4, 0.5, 1)?;
    let v = weighted_convexity_check(&hyp, &[0.0, 0.0], &profile, &geods, &ConvexityOptions::default())?;
    println!("convexity: pass {}, worst margin {:.4}", v.pass, v.worst_margin);
    Ok(())
}
