//! Causal CEO rate-distortion toolkit.
//!
//! - [`model`]: scalar Gauss-Markov estimation algebra and Riccati steady states.
//! - [`rdf`]: rate-distortion functions, the sum-rate convex program, waterfilling and loss bounds.
//! - [`finite_bt`]: exact finite-alphabet directed information and nonasymptotic Berger-Tung bounds.
//! - [`tracking_sim`]: covariance analysis and Monte Carlo of the Gaussian test-channel scheme.

pub mod error;
pub mod model;
pub mod finite_bt;
pub mod rdf;
pub mod tracking_sim;

pub use error::{Error, Result};
pub use model::{ChannelSet, ExtVariance, JointMode, SourceModel, SteadyState};
pub use rdf::{Allocation, RdfQuery, Unit};
