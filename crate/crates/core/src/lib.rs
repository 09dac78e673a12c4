//! Image-space MPPI control over costmaps derived from CNN activations.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: world -> pixel projection of planned trajectories.
//! - [`dynamics`]: vehicle transition models (kinematic bicycle, table).
//! - [`costmap`]: activation aggregation, binary filter, resize, blur, lookup.
//! - [`mppi`]: the sampling controller and its cost.
//! - [`simworld`]: synthetic tracks, driver-view renderer, closed-loop episodes.
//! - [`harness`]: configuration, experiment batches, metrics and file I/O.

pub mod costmap;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mppi;
pub mod simworld;

pub use error::{Error, Result};
