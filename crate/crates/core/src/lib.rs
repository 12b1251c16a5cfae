//! Symmetry-aware object-centric multi-view aggregation.
//!
//! Lifts per-pixel features from posed-free views into a shared canonical
//! voxel grid through predicted symmetry-aware coordinates, aggregates them
//! order-independently, and drives voxel-occupancy and novel-view-rendering
//! heads, all differentiable end-to-end on a reverse-mode tape.

pub mod aggregate;
pub mod canonical;
pub mod diffcore;
pub mod error;
pub mod gradsuite;
pub mod heads;
pub mod parallel;
pub mod scenes;
pub mod symmetry;
pub mod trainer;
pub mod voxelgrid;

pub use error::{Error, Result};
