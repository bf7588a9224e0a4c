//! Second fundamental forms, weighted mean curvature and the H-index form
//! of a circle in the plane with a density.

use std::sync::Arc;

use wsec::catalog;
use wsec::geodesic::{integrate_geodesic, GeodesicOptions, VectorFieldAlong};
use wsec::jet::Jet;
use wsec::tube::{h_index_form, second_fundamental_form, second_fundamental_form_weighted, weighted_mean_curvature, ImmersedSubmanifold};

fn main() -> wsec::Result<()> {
    let flat = catalog::by_name("euclidean").unwrap().spec;
    let spec = flat.with_density(Arc::new(|x: &[Jet]| x[0] * 0.5));
    let circle = ImmersedSubmanifold::curve(spec.clone(), |u| vec![u.cos() * 2.0, u.sin() * 2.0], (0.0, 6.0), 2)?;
    let u = [0.0];
    let (n_out, t) = ([1.0, 0.0], [0.0, 1.0]);
    println!("II_N   = {:+.6}", second_fundamental_form(&circle, &u, &n_out, &t, &t)?);
    println!("II^φ_N = {:+.6}", second_fundamental_form_weighted(&circle, &u, &n_out, &t, &t)?);
    println!("η^φ    = {:?}", weighted_mean_curvature(&circle, &u)?);

    let traj = integrate_geodesic(&spec, &[2.0, 0.0], &[1.0, 0.0], 1.5, &GeodesicOptions::default())?;
    let v = VectorFieldAlong::from_fn(&traj, |t| (vec![1.0 + t * t], vec![2.0 * t]));
    let idx = h_index_form(&circle, &u, &traj, &v)?;
    println!("H-index form: weighted {:.8}, classical {:.8}", idx.weighted, idx.classical);
    Ok(())
}
