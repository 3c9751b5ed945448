pub mod channel;
pub mod cooperation;
pub mod detectors;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod mathcore;
pub mod multiband;
pub mod throughput;
