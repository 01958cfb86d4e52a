//! Network service and command-line front end for the view-recovery core.

pub mod cli;
pub mod server;
