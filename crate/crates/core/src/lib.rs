//! Signature-based control-flow and control-signal integrity for an in-order
//! RV32I pipeline: instruction set and image format, signature functions, a
//! cycle-level simulator with the integrity monitors, the offline
//! instrumentation toolchain and a fault-injection harness.

pub mod config;
pub mod corpus;
pub mod harness;
pub mod isa;
pub mod sigfun;
pub mod sim;
pub mod toolchain;
