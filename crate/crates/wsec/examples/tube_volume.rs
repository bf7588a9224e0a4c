//! Tube volumes: geodesic caps and the equatorial band on S², and an s-tube
//! about the origin of ℝ³ with a quadratic density.

use std::f64::consts::PI;

use wsec::catalog;
use wsec::tube::{hk_bound_check, ImmersedSubmanifold, RadiusKind, TubeOptions};

fn main() -> wsec::Result<()> {
    let sph = catalog::round_sphere(2, 1.0).spec;
    let south = catalog::sphere_to_chart(1.0, &[0.0, 0.0, -1.0]);
    let point = ImmersedSubmanifold::single_point(sph.clone(), south)?;
    for r in [0.5, 1.0] {
        let rep = hk_bound_check(&point, 1.0, r, RadiusKind::Distance, 1e-6, &TubeOptions::default())?;
        println!("cap r = {r}: measured {:.6}, bound {:.6}, 2π(1 − cos r) = {:.6}", rep.measured, rep.bound, 2.0 * PI * (1.0 - r.cos()));
    }
    let equator = ImmersedSubmanifold::curve(sph, |u| vec![u.cos(), u.sin()], (0.0, 2.0 * PI), 4)?;
    let rep = hk_bound_check(&equator, 1.0, 0.5, RadiusKind::Distance, 1e-6, &TubeOptions::default())?;
    println!("band r = 0.5: measured {:.6}, 4π sin r = {:.6}", rep.measured, 4.0 * PI * 0.5f64.sin());

    let eq3 = catalog::euclidean_quadratic(3, 1.0).spec;
    let origin = ImmersedSubmanifold::single_point(eq3, vec![0.0; 3])?;
    let rep = hk_bound_check(&origin, 1.0, 0.5, RadiusKind::Reparametrized, 1e-6, &TubeOptions::default())?;
    println!("s-tube: mu = {:.5} ± {:.1e}, bound {:.5}, pass {}", rep.measured, rep.mc_stderr, rep.bound, rep.pass);
    Ok(())
}
