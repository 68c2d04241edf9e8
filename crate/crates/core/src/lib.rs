//! Structural equation models for tables of benchmark scores.
//!
//! A model names latent traits and the benchmarks that measure them. Fitting
//! it by maximum likelihood against the covariance of per-model scores gives
//! loadings, latent correlations, and fit statistics (chi-square, CFI, RMSEA).
//!
//! ```
//! use lvsem::{analyze, parse_model, AnalysisOptions, ScoreTable};
//!
//! let spec = parse_model("A =~ x1 + x2\nB =~ y1 + y2\nA ~~ B").unwrap();
//! assert_eq!(spec.validate_identification().degrees_of_freedom, 1);
//! # let _ = (analyze, AnalysisOptions::default(), ScoreTable::new(vec![], vec![], vec![]));
//! ```

pub mod dataset;
pub mod dot;
pub mod error;
pub mod inference;
pub mod modelspec;
pub mod optimizer;
pub mod ram;
pub mod report;
pub mod simulate;

pub use dataset::{align_and_covariance, load_scores, CovInput, CovOptions, ScoreTable};
pub use dot::export_dot;
pub use error::{Result, SemError};
pub use modelspec::{
    parse_model, validate_identification, Identification, IdentificationReport,
    IdentificationStatus, ModelSpec,
};
pub use optimizer::{fit_ml, initial_values, FitOptions, FitResult, GradientMethod};
pub use ram::{build_ram, implied_covariance, ml_discrepancy, RamMatrices};
pub use report::{analyze, render_text, AnalysisOptions, FitReport};
pub use simulate::{cholesky_factor, parse_theta, recovery_study, sample_scores, TrueModel};
