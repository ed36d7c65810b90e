//! Decoupled access-execute (DAE) loop transformation guided by load
//! profiles, with a DVFS-aware timing and energy model.
//!
//! The pipeline is: [`profiler`] finds the loads that stall, [`daegen`]
//! strip-mines the target loop and builds a prefetching access phase for each
//! slice, and [`machsim`] runs access phases at low frequency and execute
//! phases at high frequency to account time and energy. [`harness`] wires the
//! pieces into the `daef` command line tool.

pub mod cfg;
pub mod daegen;
pub mod dir;
pub mod harness;
pub mod machsim;
pub mod profiler;
