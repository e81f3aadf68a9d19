//! Sharded Muon optimizer engine with a deterministic multi-rank fabric
//! simulator.
//!
//! The crate is split into layers:
//!
//! * [`tensor`]: dense matrices, Newton-Schulz orthogonalization and the
//!   Muon momentum / apply rules.
//! * [`polynorm`]: the PolyNorm activation in naive and fused forms.
//! * [`sharding`]: parameter specs, device meshes, shard layouts, FLOPs
//!   estimation, owner assignment and chunking.
//! * [`fabric`]: simulated collectives, cost model, event trace and memory
//!   accounting.
//! * [`optim`]: the Distributed Muon baseline, Parallel Muon (plain and
//!   pipelined) and a single-rank oracle.
//! * [`harness`]: config files, experiment runner, reports, sweeps and the
//!   PolyNorm benchmark.

pub mod error;
pub mod fabric;
pub mod harness;
pub mod optim;
pub mod polynorm;
pub mod sharding;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sharding.md")]
    mod sharding {}
    #[doc = include_str!("../../../book/src/fabric.md")]
    mod fabric {}
    #[doc = include_str!("../../../book/src/optimizers.md")]
    mod optimizers {}
    #[doc = include_str!("../../../book/src/pipelining.md")]
    mod pipelining {}
    #[doc = include_str!("../../../book/src/polynorm.md")]
    mod polynorm {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
