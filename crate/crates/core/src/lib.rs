//! Inducing schemes and Young towers for multimodal interval maps.
//!
//! The pipeline runs from critical-orbit sequences through binding periods
//! and large-scale partitions to a full-return Markov map, its tower, and
//! the statistics measured on it.

pub mod combinatorics;
pub mod critical_orbit;
pub mod decay;
pub mod error;
pub mod full_return;
pub mod inducing;
pub mod map_kernel;
pub mod stats;
pub mod tower_stats;

pub use error::{Error, Result};
pub use map_kernel::{Family, IntervalMap, MapSpec, Orbit};
