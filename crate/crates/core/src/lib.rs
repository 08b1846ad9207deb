//! Linearization toolkit for Monge-Ampère equations of the form
//! `u_xx u_yy - u_xy^2 = u_y^4 f(u, u_x/u_y)`.
//!
//! The pieces fit together as follows:
//!
//! - [`expr`] parses, evaluates and differentiates formulas,
//! - [`fields`] holds jets, grids and finite-difference stencils,
//! - [`transforms`] implements the Ampère, point, Legendre and rotation steps
//!   and the combined contact map,
//! - [`equations`] classifies right-hand sides and extracts the linear coefficient,
//! - [`linsolve`] solves `U_XX + f(X,Y) U_YY = g` on a rectangle,
//! - [`lift`] pushes linear solutions back to nonlinear ones and verifies them,
//! - [`elasticity`] builds the plane and axisymmetric deformation maps.

pub mod elasticity;
pub mod equations;
pub mod expr;
pub mod fields;
pub mod lift;
pub mod linsolve;
pub mod transforms;

pub use expr::{Bindings, Expr};
pub use fields::{Geometry, Grid2, Jet2, MaskedGrid2, Rect};

/// Seed used for every sampled check unless the caller overrides it.
pub const DEFAULT_SEED: u64 = 42;
