//! Interior penalty discontinuous Galerkin discretizations of elliptic and
//! parabolic problems driven by a line source concentrated on a curve
//! embedded in a three-dimensional box.

pub mod assembly;
pub mod basis;
pub mod curve;
pub mod elliptic;
pub mod expr;
pub mod error;
pub mod field;
pub mod mesh;
pub mod norms;
pub mod parabolic;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod study;
pub mod vtk;

pub use error::{Error, Result};
