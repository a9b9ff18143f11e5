//! Quality assessment for multi-subject talking-human videos.

pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod subjective;
pub mod model;
pub mod study;
pub mod synthetic;
