//! Test registry and citizen-facing service.
//!
//! Records test results, keeps per-area positive counts, issues
//! registration tokens, answers suspect-status queries from the embedded
//! operator network, and scores symptom questionnaires.

pub mod api;
pub mod area;
pub mod geocode;
pub mod registry;
pub mod store;

pub use registry::{Registry, RegistryConfig, RegistryError};
