//! Construction of multi-layer concentration profiles for
//! `eps^2 div(A grad u) - V u + u^p = 0` in a planar domain.
//!
//! The pipeline runs curve geometry ([`geometry`]), weighted-length
//! variations along the curve ([`geodesic`]), the one-dimensional profile
//! and its corrections ([`profiles`]), the Jacobi-Toda system for the layer
//! positions ([`toda`]) and finally the assembled approximate solution and
//! its residual ([`assembly`]).

pub mod assembly;
pub mod cli;
pub mod fieldexpr;
pub mod geodesic;
pub mod geometry;
pub mod numeric;
pub mod profiles;
pub mod toda;
