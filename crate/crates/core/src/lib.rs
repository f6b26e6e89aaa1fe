//! Adaptive P1 finite elements for quasi-static phase-field fracture with a
//! strain-limiting (algebraically nonlinear) bulk response.
// negated comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::assign_op_pattern)]

pub mod adaptivity;
pub mod assembly;
pub mod driver;
pub mod estimator;
pub mod io;
pub mod mesh;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod verification;

pub use scalar::Scalar;

pub type Mesh64 = mesh::Mesh<f64>;
pub type Mesh32 = mesh::Mesh<f32>;
pub type NodalField64 = model::NodalField<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
