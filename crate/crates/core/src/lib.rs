pub mod beamforming;
pub mod cache;
pub mod channel;
pub mod config;
pub mod harness;
pub mod linalg;
pub mod lmi;
pub mod robustness;
pub mod solver;
pub mod vars;
