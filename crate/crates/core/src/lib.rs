//! Numerical laboratory for composable security of prepare-and-measure
//! quantum key distribution.
//!
//! * [`qmatrix`] dense density-matrix kernel
//! * [`qinfo`] entropies, distances, Holevo and accessible information
//! * [`cq`] block-diagonal classical-quantum states
//! * [`qkdsim`] BB84 simulation under individual attacks and the game states
//! * [`bounds`] security quantities and certified inequality chains
//! * [`compose`] composition budgets

pub mod bounds;
pub mod compose;
pub mod cq;
pub mod qinfo;
pub mod qkdsim;
pub mod qmatrix;
pub mod random;
