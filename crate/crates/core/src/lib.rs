//! Uncertainty-aware surrogate modelling for expensive deterministic simulators.
//!
//! The crate trains two Bayesian emulators, an MC-dropout neural network
//! ([`bnn`]) and a stochastic variational Gaussian process ([`svgp`]), against
//! datasets produced by a synthetic building-energy [`simulator`]. Their
//! predictive distributions are scored by [`evaluation`] (accuracy,
//! calibration, sharpness, discard ranking) and the [`router`] decides which
//! queries should be sent back to the simulator.

pub mod artifact;
pub mod bnn;
pub mod design_space;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod optim;
pub mod pipeline;
pub mod predictive;
pub mod router;
pub mod simulator;
pub mod stats;
pub mod svgp;
pub mod transforms;

pub use artifact::{ModelArtifact, TrainedModel};
pub use bnn::{BnnArchitecture, BnnModel, TrainConfig};
pub use design_space::{lhs_sample, split_train_test, Dataset, DesignSpace, LhsVariant, Parameter};
pub use error::{Error, Result};
pub use evaluation::{AccuracyReport, CalibrationCurve, DiscardCurve, EvaluationReport};
pub use predictive::{PredictOptions, PredictiveDistribution, Surrogate};
pub use router::{RoutingDecision, RoutingReport, ThresholdPolicy};
pub use simulator::{BuildingConstants, BuildingParams, SimOutputs, Simulator};
pub use svgp::{Kernel, KernelKind, SvgpConfig, SvgpModel};
pub use transforms::{BoxCoxParams, StandardizeParams, TransformPipeline};
