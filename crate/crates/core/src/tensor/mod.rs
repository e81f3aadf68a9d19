//! Dense-matrix numerics for Muon.

mod block;
mod matrix;
mod muon;

pub use block::{Block, Region, ShapeOnly};
pub use matrix::{Matrix, Scalar};
pub use muon::{
    apply_update, momentum_update, newton_schulz, update_scale, MuonHyper,
    DEFAULT_NS_COEFFICIENTS,
};
