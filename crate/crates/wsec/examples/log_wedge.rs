//! Log-derivative of the Jacobi volume on S³ against flat ℝ³.

use wsec::catalog;
use wsec::comparison::CheckOptions;
use wsec::geodesic::{integrate_geodesic, normal_jacobi_family, GeodesicOptions};
use wsec::tube::log_wedge_comparison;

fn main() -> wsec::Result<()> {
    let sph = catalog::round_sphere(3, 1.0).spec;
    let p = catalog::sphere_to_chart(1.0, &[0.0, 0.0, 0.0, -1.0]);
    let tr = integrate_geodesic(&sph, &p, &[0.5, 0.0, 0.0], 3.1, &GeodesicOptions::default())?;
    let flat = catalog::euclidean_quadratic(3, 0.0).spec;
    let trf = integrate_geodesic(&flat, &[0.0; 3], &[1.0, 0.0, 0.0], 3.1, &GeodesicOptions::default())?;
    let v = log_wedge_comparison(
        (&sph, &normal_jacobi_family(&sph, &tr)?),
        (&flat, &normal_jacobi_family(&flat, &trf)?),
        (0.05, 3.0),
        &CheckOptions::default(),
    )?;
    let i = v.s_grid.len() / 2;
    println!("s = {:.3}: 2 cot s = {:.6} <= 2/s = {:.6}", v.s_grid[i], v.lhs[i], v.rhs[i]);
    println!("pass {}", v.pass);
    Ok(())
}
