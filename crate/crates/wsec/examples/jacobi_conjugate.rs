//! Radial Jacobi fields on a rotationally symmetric space against the closed
//! form e^{φ(r)} sn_k(s(r)), and conjugate points on the round sphere.

use nalgebra::DMatrix;
use wsec::catalog;
use wsec::geodesic::{conjugate_points, integrate_geodesic, integrate_jacobi_family, GeodesicOptions};
use wsec::ode::OdeOptions;

fn main() -> wsec::Result<()> {
    let rot = catalog::by_name("rotational-k1").unwrap();
    let truth = rot.truths.jacobi_norm.clone().unwrap();
    // the chart excludes the pole, so start slightly off it with the exact data
    let r0 = 2e-3;
    let h = 1e-6;
    let a0 = DMatrix::from_row_slice(2, 1, &[0.0, truth(r0)]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, (truth(r0 + h) - truth(r0 - h)) / (2.0 * h)]);
    let traj = integrate_geodesic(&rot.spec, &[r0, 0.7], &[1.0, 0.0], 2.0, &GeodesicOptions::default())?;
    let j = integrate_jacobi_family(&rot.spec, &traj, &a0, &b0, &OdeOptions::default())?.field(0);
    for &t in &[0.5, 1.0, 1.5, 2.0] {
        println!("r = {:.3}  |J| = {:.8}  closed form {:.8}", r0 + t, j.norm_at(t), truth(r0 + t));
    }

    let sph = catalog::round_sphere(2, 1.0).spec;
    let p = catalog::sphere_to_chart(1.0, &[0.0, 1.0, 0.0]);
    // the equator is the unit circle of the chart, where g = δ
    let traj = integrate_geodesic(&sph, &p, &[1.0, 0.0], 6.0, &GeodesicOptions::default())?;
    println!("conjugate points along a great circle: {:?}", conjugate_points(&sph, &traj)?);
    Ok(())
}
