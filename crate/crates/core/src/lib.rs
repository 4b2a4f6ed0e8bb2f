//! Latency modeling, joint trajectory and resource optimization, and
//! multimodal federated training for UAV-assisted sensing networks.

pub mod channel;
pub mod convergence;
pub mod fml;
pub mod scenario;
pub mod sca;
