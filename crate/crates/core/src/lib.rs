pub mod error;
pub mod gain;
pub mod geometry;
pub mod traffic;
pub mod policies;
pub mod placement;
pub mod analysis;
pub mod sim;
pub mod config;
pub mod cli;
pub mod selfcheck;
