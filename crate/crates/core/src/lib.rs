// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod bus;
pub mod codesynth;
pub mod diagnostics;
pub mod experiments;
pub mod memory;
pub mod mission;
pub mod negotiation;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod topics;
pub mod tuning;
