//! Contact processes with i.i.d. random vertex weights on the oriented
//! lattice `Z^d`, simulated on finite boxes.
//!
//! * [`lattice`] and [`env`]: box geometry and the quenched weight field.
//! * [`kinetics`]: exact event-driven simulation of the forward, reversed and
//!   removal processes, and the annealed `f_t` estimator.
//! * [`harris`]: the graphical representation shared by all three processes,
//!   with per-realization duality and coupling checks.
//! * [`moments`]: infected-path counts, exact first moments via a transfer
//!   matrix, and the second-moment ratio.
//! * [`walks`]: collision structure of two independent oriented walks.
//! * [`critfind`]: survival probabilities and critical-value scans.
//! * [`runner`]: the experiment runner behind the `ocp` binary.

pub mod critfind;
pub mod env;
pub mod error;
pub mod harris;
pub mod kinetics;
pub mod lattice;
pub mod moments;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod walks;

pub use error::{Error, Result};
