//! Swing-up of a cable-suspended aerial platform.
//!
//! * [`model`]: equations of motion and RK4 integration.
//! * [`control`]: outer swing loop, inner attitude loop, thrust allocation.
//! * [`env`]: episodic environment where actions move the task reference.
//! * [`learn`]: Gaussian MLP policy and a PPO trainer with hand-written gradients.
//! * [`oracle`]: independent reference computations used by tests and self-checks.

pub mod control;
pub mod env;
pub mod error;
pub mod learn;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
