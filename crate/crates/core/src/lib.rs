//! Simulation, energy-shaping control, system identification and an RL
//! environment for a hopping leg mounted on a vertical rail.

pub mod config;
pub mod log;
pub mod model;
pub mod sim;
pub mod control;
pub mod sysid;
pub mod rlenv;
