//! Files, transports and the command line around `cci-core`.

pub mod cli;
pub mod config;
pub mod gateway;
pub mod io;
pub mod manifest;
pub mod solve;
