//! Decision-scope supervision for learned trajectory planners.
//!
//! The crate bundles the pieces needed to study how far ahead a planner
//! should be supervised: per-timestep loss weights, Haar and strided
//! decompositions of expert trajectories, multi-level scope losses, a small
//! policy network with hand-written gradients, and a closed-loop world with
//! scripted surprises to evaluate it in.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod observation;
pub mod parallel;
pub mod policy;
pub mod seed;
pub mod sim;
pub mod store;
pub mod training;
pub mod trajectory;
pub mod wavelet;
pub mod weights;

pub use error::{Error, Result};
pub use observation::{EgoState, Observation, PlanConfig, SignalState};
pub use trajectory::{Trajectory, Waypoint};
pub use wavelet::{ScopedStack, WaveletPyramid};
pub use weights::{GpParams, WeightSchedule};
