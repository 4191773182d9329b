//! Command-line front ends: the gateway server and the replay harness.

pub mod client;
pub mod runner;
pub mod scripts;

pub use client::{ReplayError, RestClient, StreamClient};
pub use runner::{run_parallel, run_replay};
