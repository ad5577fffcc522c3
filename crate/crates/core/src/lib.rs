//! Quasi-steady-state co-simulation of a radial, unbalanced distribution
//! feeder whose residential air conditioners track a frequency-regulation
//! signal under probabilistic dispatch.
//!
//! The crate is organised by subsystem:
//!
//! - [`netmodel`]: feeder data model, validation, JSON schema, house populator
//! - [`powerflow`]: backward/forward sweep solver and DistFlow sensitivity
//! - [`hvac`]: two-state equivalent-thermal-parameter house model
//! - [`dispatch`]: switching-probability controller, availability, duty-cycle analytics
//! - [`transformer`]: top-oil / hot-spot thermal model and insulation aging
//! - [`monitor`]: network constraint checks with duration-aware violation logs
//! - [`engine`]: scenario orchestration and the EV / randomization studies
//! - [`results`]: CSV and manifest artifacts

pub mod dispatch;
pub mod engine;
pub mod hvac;
pub mod monitor;
pub mod netmodel;
pub mod powerflow;
pub mod results;
pub mod rng;
pub mod series;
pub mod transformer;

pub use num_complex::Complex64;
