//! Experiment harness: configuration, end-to-end blocks, BER sweeps, the
//! image demo and built-in self checks.

pub mod config;
pub mod e2e;
pub mod image;
pub mod selftest;
pub mod sweep;
