use thiserror::Error;

use crate::trajectory::Violation;

pub type Result<T> = std::result::Result<T, Error>;

/// Which of the two charges an error or field refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Particle {
    One,
    Two,
}

impl Particle {
    pub fn other(self) -> Particle {
        match self {
            Particle::One => Particle::Two,
            Particle::Two => Particle::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Particle::One => 0,
            Particle::Two => 1,
        }
    }
}

impl std::fmt::Display for Particle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Particle::One => write!(f, "particle 1"),
            Particle::Two => write!(f, "particle 2"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("insufficient resolution: {nodes} nodes, at least 3 are required")]
    InsufficientResolution { nodes: usize },

    #[error("invalid regularization: sigma must be > 0, got {0}")]
    InvalidRegularization(f64),

    #[error("invalid step: h must be > 0, got {0}")]
    InvalidStep(f64),

    #[error("superluminal velocity on {particle} at node {node}: |v| = {speed}")]
    Superluminal {
        particle: Particle,
        node: usize,
        speed: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("no timelike path for {particle}: |dq|/T = {ratio} >= 1")]
    NoTimelikePath { particle: Particle, ratio: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {last})")]
    Divergence {
        what: String,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("singular linear system in {0}")]
    Singular(String),

    #[error("lattice too large: state dimension {dimension} exceeds cap {cap}")]
    TooLarge { dimension: f64, cap: usize },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("eigensolver did not converge after {restarts} restarts (Ritz residuals {history:?})")]
    Eigensolver { restarts: usize, history: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed trajectory csv: {0}")]
    Csv(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
