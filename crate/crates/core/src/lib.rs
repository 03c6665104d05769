//! Bid landscape forecasting from right-censored auction logs.
//!
//! Models the distribution of the second-price winning price given a bid
//! request's features. Won auctions reveal the price, lost ones only that it
//! exceeded the bid. See [`models`] for the censored regressions and MCNet,
//! [`nonparametric`] for the Kaplan–Meier and uniform baselines, and
//! [`evaluation`] for ANLP scoring and experiments.

pub mod config;
pub mod dist;
pub mod error;
pub mod evaluation;
pub mod featurize;
pub mod model_file;
pub mod models;
pub mod nonparametric;
pub mod quadrature;
pub mod sim;

pub use dist::{GaussianMixture, Landscape, LandscapePoint};
pub use error::{Error, Result};
pub use evaluation::{anlp, anlp_of, ANLPReport, ExperimentReport, ExperimentSpec, FittedModel};
pub use featurize::{FeatureVector, Observation, RawRecord, Vocabulary};
pub use models::{ModelKind, ModelParams, TrainConfig};
pub use nonparametric::{KMEstimate, RSModel};
pub use sim::{SimConfig, SimData};
