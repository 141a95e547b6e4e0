//! Numerical laboratory for the generalized SQG family viewed as geodesic flow
//! on the group of exact area-preserving diffeomorphisms of the torus.

pub mod error;
pub mod exec;
pub mod euler_arnold;
pub mod flow;
pub mod group_ops;
pub mod jacobi;
pub mod morse;
pub mod spectral;
pub mod sphere_rotation;

pub use error::{Error, Result};
