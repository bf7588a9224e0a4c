//! A unit-speed geodesic on the hyperbolic disk with a linear density and its
//! reparametrized length s.

use std::sync::Arc;

use wsec::catalog;
use wsec::geodesic::{integrate_to_s, phi_geodesic_residual, GeodesicOptions};
use wsec::jet::Jet;

fn main() -> wsec::Result<()> {
    let spec = catalog::hyperbolic_ball(2).spec.with_density(Arc::new(|x: &[Jet]| x[0] * 0.3));
    // unit speed at the origin, where g = 4δ
    let traj = integrate_to_s(&spec, &[0.0, 0.0], &[0.3, 0.4], 1.0, 100.0, &GeodesicOptions::default())?;
    let end = traj.state_at(traj.t_end());
    println!("t = {:.6}, s = {:.6}, end = {:?}", traj.t_end(), traj.s_end(), end.x);
    println!("phi-geodesic residual {:.2e}", phi_geodesic_residual(&spec, &traj)?);
    let csv = traj.to_csv();
    println!("{}", csv.lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
