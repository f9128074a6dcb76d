//! Decentralized actor–critic–identifier consensus control of nonlinear
//! agents on a directed communication graph.

pub mod basis;
pub mod dynamics;
pub mod graph;
pub mod identifier;
pub mod integrate;
pub mod projection;
pub mod sim;
pub mod value;
pub mod config;
pub mod io;
pub mod oracle;
