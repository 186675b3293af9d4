//! Numerical laboratory for the massive Maxwell–Klein–Gordon system in
//! Lorenz gauge, restricted to spherical symmetry plus per-ℓ radial mode
//! operators.
//!
//! The crate covers the forward problem (constraint-solved initial data,
//! evolution, extraction of the Klein–Gordon amplitudes a± and radiation
//! fields), the quadrature constructions of the homogeneous interior
//! profile, and the backward construction from scattering data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backward;
pub mod cli_io;
pub mod error;
pub mod evolve;
pub mod fit;
pub mod forward;
pub mod geometry;
pub mod interior_profile;
pub mod interp;
pub mod jet;
pub mod linalg;
pub mod par;
pub mod quad;
pub mod scattering_data;

pub use error::{Error, Result};
pub use par::Exec;
