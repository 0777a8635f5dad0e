//! HTTP gateway and command-line front end for the causal-visual
//! programming engine.

pub mod api;
pub mod cli;
pub mod store;
