//! Design and analysis tools for cluster-randomized sequential multiple
//! assignment randomized trials (SMARTs).
//!
//! The crate covers four areas:
//!
//! - [`design`]: embedded regimens, consistency indicators and known
//!   inverse-probability weights for the ADEPT-style and prototypical
//!   two-stage designs.
//! - [`data`]: individual-level outcomes nested in clusters, with CSV I/O.
//! - [`estimator`]: weighted estimating-equation regression with an
//!   exchangeable working covariance, sandwich variance and Wald tests.
//! - [`power`] and [`sim`]: closed-form sample-size calculators and a
//!   data-generating Monte Carlo harness to check them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod design;
pub mod error;
pub mod estimator;
pub mod normal;
pub mod power;
pub mod sim;

pub use data::{parse_dataset, read_dataset, validate, write_dataset, ClusterRecord, IndividualRecord, TrialDataset, ValidationReport};
pub use design::{embedded_dtrs, is_consistent, known_weight, DesignKind, EmbeddedDtr, TreatmentPath};
pub use error::{Error, Result};
pub use estimator::{fit, wald_test, ContrastResult, FitOptions, FitResult, MarginalMeanSpec, WorkingCovariance};
