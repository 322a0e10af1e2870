//! Analytic engine and discrete-event simulator for infinite-server queues
//! fed by marked Markov arrival processes in a semi-Markov environment with
//! catastrophes.

pub mod catastrophe;
pub mod distributions;
pub mod environment;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod map_core;
pub mod metrics;
pub mod model;
pub mod model_io;
pub mod simulator;
pub mod ode;
pub mod transient;

pub use error::{Diagnostic, Error, Result};
