//! Bias-corrected trace test for `H₀: L Θ R' = O` in the GMANOVA model
//! `X = A Θ B' + ℰ` with heteroscedastic groups and dimension that may
//! exceed the sample size.
//!
//! The usual entry point is [`TestPlan`]: build it once from a
//! [`DesignSpec`], then call [`TestPlan::run`] on each data matrix.
//!
//! ```
//! use gmanova::{scenarios, Matrix, TestPlan};
//!
//! let sc = scenarios::one_way_manova(&[6, 6], 3).unwrap();
//! let plan = TestPlan::new(sc.design).unwrap();
//! let x = Matrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
//! let report = plan.run(&x, 0.05).unwrap();
//! assert!(report.p_value >= 0.0 && report.p_value <= 1.0);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod normal;
pub mod oracle;
pub mod scenarios;
pub mod simulation;
pub mod test_engine;

pub use design::{DesignSpec, ProjectionSet};
pub use diagnostics::{assumption_diagnostics, DiagnosticsReport};
pub use error::{Error, Result};
pub use estimators::{GroupedSample, Tau, VarianceEstimate};
pub use linalg::{Matrix, Vector};
pub use scenarios::{Scenario, ScenarioKind, TwoWayEffect};
pub use simulation::{
    monte_carlo, CovarianceSpec, ErrorDistribution, MonteCarlo, ReplicationRecord, SimulationSummary,
};
pub use test_engine::{
    asymptotic_power, run_test, statistic_t, true_q, MeanModel, PopulationMoments, TestPlan, TestReport,
};
