//! Synthetic benchmark: Gaussian-mixture tasks, corruption, baselines and
//! the end-to-end pipeline that produces the result tables.

pub mod corruption;
pub mod eval;
pub mod pipeline;
pub mod scenario;
pub mod store;
pub mod tasks;
pub mod train;
