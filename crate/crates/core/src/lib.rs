//! Confidence intervals for a scalar treatment effect that stay valid when up to
//! `U` of the `L` candidate instruments are invalid.
//!
//! The main entry point is [`robust_ci`]: it inverts a test (AR, TSLS/Wald or
//! CLR) for every instrument subset of size `U`, optionally after a Sargan or
//! AR pretest, and returns the union of the surviving intervals.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod interval;
pub mod inversion;
pub mod model;
pub mod power;
pub mod simulation;
pub mod stats;
pub mod union;

pub use error::{Error, Result};
pub use interval::{Interval, RealIntervalSet};
pub use inversion::{ClrSettings, GridInversion, GridSpec};
pub use model::{
    InstrumentFactor, IvDataset, ProjectionBasis, ProjectionCache, QuadForms, SubsetSpec,
};
pub use power::{ar_power_exact, noncentrality, power_curve, PowerPoint, PowerSpec};
pub use stats::{
    ar_statistic, clr_statistic, sargan_statistic, tsls_fit, wald_statistic, ClrCriticalTable,
    TestResult, TslsFit,
};
pub use union::{
    analyze_with_basis, enumerate_subsets, robust_ci, robust_ci_pretest, robust_ci_with_basis,
    sensitivity_sweep, subset_ci, AnalysisConfig, RobustCiReport, SensitivityReport, SubsetRecord,
    TestKind,
};
