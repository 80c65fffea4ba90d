use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value {value} at cell {cell}")]
    NonFinite { cell: usize, value: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e}, target {target:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("matrix is singular to working precision (pivot column {column})")]
    Singular { column: usize },

    #[error("coefficient input component {component} is negative ({value})")]
    NegativeInput { component: usize, value: f64 },

    #[error("coefficient of species {} evaluated to {value} at cell {cell}, below its lower bound {bound}", species + 1)]
    CoefficientOutOfRange {
        species: usize,
        cell: usize,
        value: f64,
        bound: f64,
    },

    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),

    #[error("step {step}, species {}: {source}", species + 1)]
    Species {
        step: usize,
        species: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Picard sweeps did not converge after {sweeps} sweeps (last relative change {last_change:e})")]
    PicardNotConverged { sweeps: usize, last_change: f64 },

    #[error("species {} is not flagged locally Lipschitz; comparing the two schemes relies on uniqueness, which assumes \"a_i : [0,inf)^I -> [0,inf) is locally Lipschitz continuous\"", species + 1)]
    NotLipschitz { species: usize },

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_species(self, step: usize, species: usize) -> Self {
        Error::Species {
            step,
            species,
            source: Box::new(self),
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
