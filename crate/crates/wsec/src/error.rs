use thiserror::Error;

use crate::comparison::RiccatiProfile;
use crate::geodesic::GeodesicTrajectory;

#[derive(Debug, Error)]
pub enum WsecError {
    #[error("point {0:?} lies outside the chart domain")]
    Domain(Vec<f64>),
    #[error("metric is not positive definite at {0:?}")]
    SingularMetric(Vec<f64>),
    #[error("tangent vectors span a degenerate plane (Gram determinant {0:.3e})")]
    DegeneratePlane(f64),
    #[error("geodesic left the chart domain at t = {t:.6}")]
    DomainExit { t: f64, partial: Box<GeodesicTrajectory> },
    #[error("adaptive integrator step size underflow at t = {0:.6}")]
    StepFailure(f64),
    #[error("no connecting geodesic found: {0}")]
    NoConnectionFound(String),
    #[error("vector field is not orthogonal to the geodesic (max |g(V, sigma')| = {0:.3e})")]
    NonOrthogonalField(f64),
    #[error("s-ranges do not overlap: {0}")]
    IntervalMismatch(String),
    #[error("theorem hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error("conjugate point at s = {0:.6} inside the comparison range")]
    ConjugatePointInRange(f64),
    #[error("focal point at s = {0:.6} inside the comparison range")]
    FocalPointInRange(f64),
    #[error("Riccati solution blew up at s = {at_s:.6}")]
    Blowup { at_s: f64, partial: Box<RiccatiProfile> },
    #[error("vector is not normal to the submanifold (defect {0:.3e})")]
    NotNormal(f64),
    #[error("vector is not tangent to the submanifold (defect {0:.3e})")]
    NotTangent(f64),
    #[error("geodesic does not leave the submanifold orthogonally (defect {0:.3e})")]
    NotOrthogonalLaunch(f64),
    #[error("focal clipping ambiguous at the configured resolution: {0}")]
    Resolution(String),
    #[error("lower curvature estimate {0:.6e} is not positive")]
    NotPositivelyCurved(f64),
    #[error("density profile invalid: {0}")]
    Profile(String),
    #[error("argument outside the model domain: {0}")]
    ModelDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, WsecError>;
