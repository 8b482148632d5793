//! Numerical certification and synthesis for safety and stability
//! certificates of nonlinear control systems: CBF / eCBF / CLF / CLBF
//! verification on grids, class-K envelope fitting, converse-style
//! constructions, and closed-loop simulation.

pub mod certify;
pub mod classk;
pub mod cli;
pub mod compat;
pub mod config;
pub mod domain;
pub mod expr;
pub mod reach;
pub mod report;
pub mod scenarios;
pub mod synth;
pub mod system;
