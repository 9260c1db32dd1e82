//! Degenerate random environments on `Z^d`.
//!
//! Every site `x` carries a random subset `G_x` of the unit steps
//! `{±e_1, …, ±e_d}`, drawn i.i.d. from a finite measure. The crate samples
//! such environments on finite windows and studies the directed graph they
//! induce: forward clusters `C_x`, backward clusters `B_x`, communicating
//! clusters `M_x = C_x ∩ B_x`, blocking functions and their duality with
//! oriented triangular percolation, the special paths used to build open
//! cycles, and a Monte Carlo engine for connectivity probabilities.
//!
//! Modules:
//! - [`lattice`]: directions, arrow sets, measures, model catalog, sampling,
//!   snapshot files.
//! - [`clusters`]: cluster searches, `B_o` shape classification, blocking
//!   functions and row interval chains.
//! - [`walks`]: quadrant paths, SEoA/SWoA paths, coalescence, open cycles.
//! - [`duality`]: boundary sequences, closed-form bounds, SAW counts, the
//!   static model classifier.
//! - [`montecarlo`]: parallel estimators and statistical law checks.

pub mod clusters;
pub mod duality;
mod error;
pub mod lattice;
pub mod montecarlo;
pub mod render;
pub mod rng;
pub mod walks;

pub use error::{DreError, Result};
pub use lattice::{
    ArrowSet, Direction, EnvironmentGrid, LazyEnvironment, Lattice, ModelId, Site, SupportMeasure,
    Window,
};

/// Library version recorded in provenance lines.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
