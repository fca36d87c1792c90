//! Multicontinuum upscaling for high-contrast diffusion problems.
//!
//! The pipeline solves constrained local (cell) problems on oversampled
//! representative volume elements, extracts effective diffusion and exchange
//! coefficients per coarse cell, and assembles a coupled coarse-scale system
//! whose unknowns are one average field per continuum. A fine-scale reference
//! solver and error metrics are included for verification.

pub mod cells;
pub mod coarse;
pub mod config;
pub mod effective;
pub mod error;
pub mod fem;
pub mod grid;
pub mod io;
pub mod media;
pub mod pipeline;
pub mod sparsela;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

/// Number of spatial directions for gradient/moment indices.
pub const DIM: usize = 2;

/// Coordinate convention for gradient and moment indices.
///
/// Direction index 0 maps to the y coordinate and index 1 to x. With
/// horizontally layered media (layers normal to y) the strongly conducting
/// along-layer direction then reports in the (2,2) tensor slot in 1-based
/// output labels. Every gradient/moment index in the crate goes through
/// this function or [`grad_component`].
#[inline]
pub fn axis_coord(axis: usize, x: f64, y: f64) -> f64 {
    match axis {
        0 => y,
        1 => x,
        _ => panic!("axis out of range: {axis}"),
    }
}

/// Selects the component of a (d/dx, d/dy) gradient for a direction index.
#[inline]
pub fn grad_component(axis: usize, gx: f64, gy: f64) -> f64 {
    match axis {
        0 => gy,
        1 => gx,
        _ => panic!("axis out of range: {axis}"),
    }
}
