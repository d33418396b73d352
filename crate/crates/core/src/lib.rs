//! Cellular-geolocation contact tracing.
//!
//! - [`ppp`]: smartphone-only vs any-phone tracing on a Poisson point process
//! - [`trace`]: spatiotemporal contact join and suspect aggregation
//! - [`opnet`]: simulated tracer/operator message protocol
//! - [`triage`]: symptom questionnaire scoring

pub mod geo;
pub mod opnet;
pub mod phone;
pub mod ppp;
pub mod seed;
pub mod synth;
pub mod trace;
pub mod triage;

pub use geo::{GeoCoordinate, PlanarPoint, TimeBucket};
pub use phone::{PhoneNumber, PhoneNumberError};
