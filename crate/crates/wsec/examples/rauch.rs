//! Rauch comparisons: the sphere against the flat plane, and a plane with a
//! linear density against the flat plane.

use std::sync::Arc;

use nalgebra::DMatrix;
use wsec::catalog;
use wsec::comparison::{rauch1_check, rauch2_check, CheckOptions};
use wsec::geodesic::{integrate_jacobi_family, integrate_to_s, GeodesicOptions, GeodesicTrajectory, JacobiTrajectory};
use wsec::jet::Jet;
use wsec::manifold::MetricDensitySpec;
use wsec::ode::OdeOptions;

fn field(spec: &MetricDensitySpec, traj: &GeodesicTrajectory, a: f64, b: f64) -> wsec::Result<JacobiTrajectory> {
    let a0 = DMatrix::from_fn(2, 1, |i, _| if i == 1 { a } else { 0.0 });
    let b0 = DMatrix::from_fn(2, 1, |i, _| if i == 1 { b } else { 0.0 });
    Ok(integrate_jacobi_family(spec, traj, &a0, &b0, &OdeOptions::default())?.field(0))
}

fn main() -> wsec::Result<()> {
    let go = GeodesicOptions::default();
    let sph = catalog::by_name("sphere").unwrap().spec;
    let flat = catalog::by_name("euclidean").unwrap().spec;
    let g1 = integrate_to_s(&sph, &[1.0, 0.0], &[0.0, 1.0], 3.0, 10.0, &go)?;
    let g2 = integrate_to_s(&flat, &[0.0, 0.0], &[1.0, 0.0], 3.0, 10.0, &go)?;
    let v = rauch1_check(&sph, &flat, &g1, &g2, &field(&sph, &g1, 0.0, 1.0)?, &field(&flat, &g2, 0.0, 1.0)?, &CheckOptions::default())?;
    println!("Rauch I sphere vs flat: pass {}  margin at s = 3: {:.6}", v.pass, v.rhs.last().unwrap() - v.lhs.last().unwrap());

    let lin = flat.clone().with_density(Arc::new(|x: &[Jet]| x[0] * 0.3));
    let gl = integrate_to_s(&lin, &[0.0, 0.0], &[1.0, 0.0], 1.0, 20.0, &go)?;
    let g3 = integrate_to_s(&flat, &[0.0, 0.0], &[1.0, 0.0], 1.0, 20.0, &go)?;
    let v = rauch2_check(&lin, &flat, &gl, &g3, &field(&lin, &gl, 1.0, 0.0)?, &field(&flat, &g3, 1.0, 0.0)?, &CheckOptions::default())?;
    println!("Rauch II linear density vs flat: pass {}  worst margin {:.3e}", v.pass, v.worst_margin);
    Ok(())
}
