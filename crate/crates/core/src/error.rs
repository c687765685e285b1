use num_complex::Complex64;
use thiserror::Error;

/// Pipeline stage an error originated in, used to tag propagated failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Support,
    Density,
    Centering,
    Contour,
    NodeSolve,
    Estimator,
    Mean,
    Covariance,
    Spectrum,
    Statistic,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Support => "support detection",
            Stage::Density => "density",
            Stage::Centering => "centering",
            Stage::Contour => "contour construction",
            Stage::NodeSolve => "contour node solve",
            Stage::Estimator => "fourth-moment estimator",
            Stage::Mean => "asymptotic mean",
            Stage::Covariance => "asymptotic covariance",
            Stage::Spectrum => "Fisher spectrum",
            Stage::Statistic => "test statistic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver did not converge at z = {z} after {iterations} iterations (last iterate {last}, residual {residual:e})")]
    NoConvergence {
        z: Complex64,
        last: Complex64,
        residual: f64,
        iterations: usize,
    },

    #[error("solver converged to the wrong branch at z = {z} (m0 = {m0})")]
    WrongBranch { z: Complex64, m0: Complex64 },

    #[error("support detection failed: {0}")]
    Support(String),

    #[error("branch-cut violation: {0}")]
    BranchCut(String),

    #[error("contour grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("contours not disjoint: {0}")]
    Disjointness(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("too many failed replications: {failed} of {total}")]
    Replications { failed: usize, total: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            // keep the innermost stage tag
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            Error::NoConvergence { .. }
            | Error::WrongBranch { .. }
            | Error::Support(_)
            | Error::BranchCut(_)
            | Error::GridTooCoarse(_)
            | Error::Disjointness(_)
            | Error::Conditioning(_)
            | Error::Domain(_)
            | Error::Replications { .. } => true,
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
