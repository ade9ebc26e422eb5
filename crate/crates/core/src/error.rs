use thiserror::Error;

/// Every failure the numeric core can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QedError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("tracking ambiguity at chi = {chi:e}: best overlap {overlap:.4}")]
    Tracking { chi: f64, overlap: f64 },
    #[error("renormalization breakdown: C_A'' <= 0 (sum_k Phi_k(1)^2 = {sum_phi1_sq:e})")]
    Renormalization { sum_phi1_sq: f64 },
    #[error("instability: {0}")]
    Instability(String),
    #[error("resonant denominator at mode k = {k}")]
    Resonance { k: usize },
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("integrator error: {0}")]
    Integrator(String),
    #[error("resolution error: {0}")]
    Resolution(String),
}

impl QedError {
    /// Short class name used on the command line.
    pub fn class(&self) -> &'static str {
        match self {
            QedError::Domain(_) => "domain",
            QedError::Solver(_) => "solver",
            QedError::Tracking { .. } => "tracking",
            QedError::Renormalization { .. } => "renormalization",
            QedError::Instability(_) => "instability",
            QedError::Resonance { .. } => "resonance",
            QedError::Singularity(_) => "singularity",
            QedError::Divergence(_) => "divergence",
            QedError::Integrator(_) => "integrator",
            QedError::Resolution(_) => "resolution",
        }
    }
}

pub type Result<T> = std::result::Result<T, QedError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(QedError::Domain(msg.into()))
}
