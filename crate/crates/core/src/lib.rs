//! Benchmark generation and auditing of 3D human pose estimators under
//! controlled single-attribute changes.

pub mod body_model;
pub mod cond_render;
pub mod filters;
pub mod fixture_files;
pub mod hashing;
pub mod metrics;
pub mod orchestrator;
pub mod pose_sampling;
pub mod prompt_catalog;
pub mod report;
pub mod services;
