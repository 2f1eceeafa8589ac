//! Data-driven optimal output regulation for discrete-time linear systems
//! under denial-of-service attacks.
//!
//! The crate covers the full desk-scale workflow:
//!
//! * [`plant`] — plant/exosystem/internal-model data, the augmented system,
//!   and the regulator equations;
//! * [`dos`] — attack schedules with frequency/duration budgets;
//! * [`optimal_control`] — the model-based oracle (policy iteration on the
//!   Riccati equation) and the closed-form resilience bound;
//! * [`learner`] — the model-free policy-iteration engine driven by
//!   input/state data collected between attacks;
//! * [`sim`] — closed-loop simulation with hold-last-value control under
//!   attack, trace capture and tracking metrics;
//! * [`matrix_kit`] — the dense-matrix and vectorization utilities all of the
//!   above build on.

pub mod dos;
pub mod error;
pub mod learner;
pub mod matrix_kit;
pub mod optimal_control;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
