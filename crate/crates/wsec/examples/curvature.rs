//! Weighted sectional curvature by both routes on a few catalog spaces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsec::catalog;
use wsec::manifold::{connection_defects, local_geometry, random_orthonormal_pair, CurvatureRoute};

fn main() -> wsec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for name in ["sphere", "euclidean-quadratic", "rotational-k1", "warped-torus"] {
        let d = catalog::by_name(name).unwrap();
        let x = d.spec.sample_point(&mut rng);
        let lg = local_geometry(&d.spec, &x)?;
        let (u, v) = random_orthonormal_pair(&lg, &mut rng);
        let h = lg.weighted_sectional(&u, &v, CurvatureRoute::HessianFormula)?.value;
        let t = lg.weighted_sectional(&u, &v, CurvatureRoute::TensorFormula)?.value;
        let defects = connection_defects(&d.spec, &x)?;
        println!(
            "{name:>20}  sec = {:+.6}  sec_phi = {h:+.6} (tensor {t:+.6})  trace defect {:.1e}  torsion {:.1e}",
            lg.sectional(&u, &v)?,
            defects.trace,
            defects.torsion
        );
    }
    Ok(())
}
