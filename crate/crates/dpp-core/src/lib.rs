//! Numerical laboratory for dynamic programming principles with symmetric
//! measure families on lattices.

pub mod lattice;
pub mod measures;
pub mod operators;
pub mod solver;
pub mod envelope;
pub mod barriers;
pub mod czdecomp;
pub mod regularity;
mod hull;
