//! Point cloud denoising by alternating iterative Poisson reconstruction with
//! λ-weighted projection onto the reconstructed surface.
//!
//! The crate is organised bottom-up: [`geometry`], [`spatial`] and [`io`]
//! provide value types and queries, [`poisson`] reconstructs a mesh from
//! oriented points, [`ipsr`] removes the need for orientation, and
//! [`pipeline`] runs the outer denoising loop using [`features`] and
//! [`projection`]. [`metrics`] and [`bench`] evaluate the results.

pub mod bench;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod ipsr;
pub mod metrics;
pub mod pipeline;
pub mod poisson;
pub mod projection;
pub mod shapes;
pub mod spatial;

pub use error::{Error, Result};
