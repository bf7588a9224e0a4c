//! Numerical toolkit for manifolds with density.

pub mod bounds;
pub mod catalog;
pub mod cli;
pub mod comparison;
pub mod error;
pub mod expr;
pub mod geodesic;
pub mod jet;
pub mod manifold;
pub mod model;
pub mod ode;
pub mod quadrature;
pub mod tube;

pub use error::{Result, WsecError};
