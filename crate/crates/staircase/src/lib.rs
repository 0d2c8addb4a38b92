//! Simulation and estimation for psychophysical experiments under fixed and
//! adaptive (up-down) stimulus-allocation designs.
//!
//! The crate simulates trial sequences under four schemes (fixed or up-down
//! allocation, with or without a subject random effect), estimates the
//! psychometric function parametrically and non-parametrically, quantifies
//! the small-sample bias an adaptive design induces, and provides the
//! graphical machinery to read conditional-independence statements off the
//! scheme DAGs.
//!
//! Start with the runnable examples (`cargo run --example <name>`); the
//! `staircase` binary exposes the same functionality for batch use.

pub mod bias;
pub mod cli;
pub mod dag;
pub mod design;
pub mod error;
pub mod estimate;
pub mod model;
pub mod numeric;
pub mod replicate;
pub mod rng;
pub mod sim;
pub mod study;

pub use error::{Error, Result};
pub use model::{EffectModel, IntensityGrid, LatentClassParams, Level, SubjectEffect, Theta};
pub use rng::StreamKey;
pub use sim::{ScenarioConfig, Scheme, SubjectData};
