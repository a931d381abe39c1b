//! Work decomposition and load balancing for irregular sparse kernels and
//! tile-split dense GEMM, executed on a CPU worker pool that stands in for a
//! grid of GPU thread blocks.

pub mod apps;
pub mod balance;
pub mod engine;
pub mod formats;
pub mod model;
pub mod schedules;
pub mod streamk;
pub mod verify;
