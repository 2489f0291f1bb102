//! Simulator for charge-trap-flash resistive processing unit crossbars
//! trained with stochastic pulse-train updates.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crossbar;
pub mod data_io;
pub mod device_model;
pub mod error;
pub mod rl_suite;
pub mod runner;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
