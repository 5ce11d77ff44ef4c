//! Trial running, statistics and plotting behind the `hopper` binary.

pub mod commands;
pub mod plot;
pub mod stats;
pub mod trial;
