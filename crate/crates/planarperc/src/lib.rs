//! Weight-sequence calculus for Boltzmann planar maps, exact first-passage
//! oracles for the induced peeling walk, and Monte Carlo explorations of bond
//! percolation on half-plane and finite maps.
//!
//! The crate is organized around one pipeline: a weight sequence is solved for
//! admissibility ([`weights`]), the solution induces disk partition functions
//! ([`partition`]) and a signed step law whose first-passage behavior is
//! computed exactly ([`walk_oracle`]) and sampled at scale ([`halfplane`],
//! [`finite_peel`], [`gw_trees`]), with tail exponents read off by [`stats`].

pub mod error;
pub mod finite_peel;
pub mod gw_trees;
pub mod halfplane;
pub mod numeric;
pub mod partition;
pub mod rng;
pub mod stats;
pub mod walk_oracle;
pub mod weights;

pub use error::{Error, Result};
