//! Hessian comparison of the distance function and the Myers diameter bound
//! on the unit sphere.

use wsec::catalog;
use wsec::comparison::{hessian_comparison_check, myers_check, BoundSide, CurvatureBound, HessianOptions, MyersOptions};
use wsec::geodesic::{minimizing_geodesic, ShootingOptions};

fn main() -> wsec::Result<()> {
    let sph = catalog::by_name("sphere").unwrap().spec;
    let p = catalog::sphere_to_chart(1.0, &[1.0, 0.0, 0.0]);
    let q = catalog::sphere_to_chart(1.0, &[1f64.cos(), 1f64.sin(), 0.0]);
    let conn = minimizing_geodesic(&sph, &p, &q, &ShootingOptions::default())?;
    let y = conn.trajectory.state_at(conn.trajectory.t_end()).frame[1].clone();
    let bound = CurvatureBound { side: BoundSide::Lower, value: 1.0 };
    let v = hessian_comparison_check(&sph, &p, &q, &y, bound, &HessianOptions::default())?;
    println!("Hess r(Y,Y) = {:.8}, cot(1) = {:.8}", v.lhs[0], 1f64.tan().recip());

    let v = myers_check(&sph, 1.0, 12, &MyersOptions::default())?;
    println!("Myers: max s(p,q) = {:.6} <= pi: {}", v.metadata["max_s"], v.pass);
    Ok(())
}
