//! Geotemporal VM migration scheduling for geographically distributed IaaS
//! clouds.
//!
//! The crate plans migration schedules over a forecast window with a hybrid
//! genetic algorithm, trading energy cost under volatile electricity prices
//! and temperature-dependent cooling against the QoS cost of migrations, and
//! simulates the resulting controller against price and temperature traces.

pub mod baselines;
pub mod config;
pub mod error;
pub mod fitness;
pub mod forecasting;
pub mod ga;
pub mod geotraces;
pub mod model;
pub mod placement;
pub mod rng;
pub mod simulation;
pub mod timeseries;

pub use error::{Error, Result};
