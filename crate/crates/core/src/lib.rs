//! Simulation core for disaster-resilient LTE: base stations that embed
//! virtualized core-network agents, and a device-to-device protocol that
//! needs neither base station nor core.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration
//! parsing, statistics and the command-line tool live in the `fmesim` crate.

#![no_std]

extern crate alloc;

pub mod d2d;
pub mod engine;
pub mod fme;
pub mod radio;
pub mod rng;
pub mod topology;
pub mod traffic;
pub mod world;
