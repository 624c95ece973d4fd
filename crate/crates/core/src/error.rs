use thiserror::Error;

/// Errors raised by the inference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of a distribution function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes do not fit together, or too few observations.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite or otherwise unusable data values.
    #[error("data error: {0}")]
    Data(String),

    /// Rank deficiency among instruments or covariates.
    #[error("collinear {what}: columns {}", .columns.join(", "))]
    Collinear {
        what: &'static str,
        columns: Vec<String>,
    },

    /// A residual quadratic form vanished, so the statistic is undefined.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// The first stage carries no information about the exposure.
    #[error("identification error: {0}")]
    Identification(String),

    /// Overidentification test requested with fewer than two instruments.
    #[error("just-identified: Sargan test needs at least 2 instruments outside B, found {0}")]
    JustIdentified(usize),

    /// Pretesting needs c(B^c) >= 2 for every enumerated subset.
    #[error("pretest infeasible for U = {u} with L = {l}: L - U + 1 must be at least 2 (use the plain union instead)")]
    PretestInfeasible { u: usize, l: usize },

    /// Invalid user configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
