//! A space given by expression strings, as in a run configuration.

use wsec::expr::InlineSpec;
use wsec::manifold::{local_geometry, CurvatureRoute};

fn main() -> wsec::Result<()> {
    let text = r#"{
        "name": "stereographic-with-density",
        "dim": 2,
        "metric": {"conformal": "4 / (1 + x1^2 + x2^2)^2"},
        "density": "0.2 * sin(x1) × x2"
    }"#;
    let inline: InlineSpec = serde_json::from_str(text).expect("valid inline spec");
    let spec = inline.build()?;
    let lg = local_geometry(&spec, &[0.3, -0.2])?;
    let w = lg.weighted_sectional(&[1.0, 0.0], &[0.0, 1.0], CurvatureRoute::HessianFormula)?;
    println!("sec = {:.8}, sec_phi = {:.8}", lg.sectional(&[1.0, 0.0], &[0.0, 1.0])?, w.value);
    Ok(())
}
