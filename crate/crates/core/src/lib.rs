//! Remote state estimation of many linear systems sharing a slot-limited
//! network.
//!
//! Each agent runs `x(k+1) = A x(k) + v(k)` and a remote open-loop predictor.
//! Per round a scheduler hands out slots, either round-robin or to the agents
//! with the largest squared errors, and a granted agent transmits only when
//! its error reaches the threshold `δ`. The crate simulates that loop, computes
//! worst-case error bounds for both schedulers, and switches between them
//! adaptively whenever the dynamics change.

pub mod bounds;
pub mod cartpole;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod rng;
pub mod cli;
pub mod scenario;
pub mod scheduling;
pub mod simulator;

pub use error::{Error, Result};
