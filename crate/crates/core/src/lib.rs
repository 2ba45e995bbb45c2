pub mod cli;
pub mod finance;
pub mod kernels;
pub mod mathcore;
pub mod oracle;
mod parallel;
pub mod replicator;
pub mod sde;
pub mod stats;
pub mod weights;
