//! Discrete-event simulation of linear quantum repeater chains.

pub mod chart;
pub mod config;
pub mod experiments;
pub mod hardware;
pub mod network;
pub mod protocols;
pub mod report;
pub mod sim;
pub mod state;
pub mod stats;
