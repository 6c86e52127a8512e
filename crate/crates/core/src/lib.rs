//! Prediction uncertainty for binary neural classifiers whose inputs carry
//! discrete observation errors.
//!
//! A bootstrap ensemble of small MLPs approximates the parameter posterior.
//! An [`ErrorModel`] maps an observed query to a finite distribution over
//! plausible true feature vectors. The [`uq`] module combines both: it takes
//! the first two moments of the logit difference `Δ = z1 - z0` over the
//! members and the error support, and applies a second-order Taylor
//! correction to the sigmoid to get the expected class-1 probability.
//! Uncertainty is the variation ratio `1 - max(p, 1 - p)`.
//!
//! Running the same computation with the degenerate error model (the
//! observed vector is the truth) gives the parameter-only, or non-EIV,
//! estimate. Queries whose predicted class differs between the two are
//! flips.
//!
//! ```
//! use eivuq::{uq, ErrorModel, FeatureErrorSpec, LogitMatrix};
//!
//! // Two members, one candidate: Δ is 1 and 3.
//! let logits = LogitMatrix::from_rows(&[vec![(0.0, 1.0)], vec![(0.0, 3.0)]]).unwrap();
//! let m = uq::moments_noneiv(&logits).unwrap();
//! assert_eq!((m.mu_delta(), m.var_delta), (2.0, 1.0));
//! let p = uq::taylor_expected_prob(m.mu0, m.mu1, m.var_delta).unwrap();
//! assert!((p.p1 - 0.8408161).abs() < 5e-7);
//!
//! // A smear-style test: sensitivity 0.64, specificity 0.98, prevalence 0.5.
//! let spec = FeatureErrorSpec::from_sensitivity_specificity(0, 0.64, 0.98, 0.5).unwrap();
//! let model = ErrorModel::new(vec![spec]).unwrap();
//! let support = model.enumerate_support(&[1.0]).unwrap();
//! assert_eq!(support.len(), 2);
//! ```

pub mod data;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod errormodel;
pub mod eval;
pub mod io;
pub mod mcdropout;
pub mod nn;
pub mod seed;
pub mod uq;

pub use data::{Column, Dataset, Matrix};
pub use datagen::{generate, split, LabelRule, ScenarioSpec};
pub use ensemble::{Bootstrap, EnsembleModel, LogitMatrix, LogitSource};
pub use error::{Error, Result};
pub use errormodel::{ErrorModel, FeatureErrorSpec, JointErrorSpec, SupportPoint};
pub use mcdropout::McDropoutModel;
pub use nn::{Activation, LogitPair, Network, NetworkSpec, Optimizer, TrainConfig};
pub use uq::{MomentEstimate, PredictiveEstimate, QueryRecord, Regime, UncertaintyReport};
