//! Inference of CO2 saturation plumes, with uncertainty, from time-lapse
//! seismic images and well measurements using a conditional normalizing
//! flow.
//!
//! The crate covers the whole loop: synthetic earth models ([`geomodel`]),
//! two-phase flow with seal leakage ([`resim`]), the observation operator
//! ([`obs`]), the flow itself ([`cnf`]), maximum-likelihood training
//! ([`train`]), posterior sampling and metrics ([`posterior`]), and dataset
//! generation plus reporting ([`pipeline`]).

pub mod cnf;
pub mod error;
pub mod geomodel;
pub mod obs;
pub mod pipeline;
pub mod posterior;
pub mod resim;
pub mod rng;
pub mod train;

pub use cnf::{FlowConfig, FlowModel, LatentCode};
pub use error::{Error, Result};
pub use geomodel::{EarthModel, GeoConfig, Grid2D};
pub use obs::{ObservationConfig, ObservationTriple};
pub use pipeline::RunConfig;
pub use posterior::{EvalReport, PosteriorConfig, PosteriorEnsemble};
pub use train::TrainConfig;
