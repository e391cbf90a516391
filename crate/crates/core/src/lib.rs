//! Bifurcation analysis of a chemostat in which two obligate mutualists
//! compete for one substrate.

pub mod atlas;
pub mod branch;
pub mod config;
pub mod continuation;
pub mod cycles;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod hopf;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod plot;

pub use error::{Error, Result};
pub use model::{ModelParams, OperatingParam, Species, State};
