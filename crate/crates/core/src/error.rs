use thiserror::Error;

/// Errors surfaced by the tree engine and the solvers built on top of it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("integrand violates {orientation} orientation on interval {interval} (deviation {deviation:.3e})")]
    Orientation {
        orientation: &'static str,
        interval: usize,
        deviation: f64,
    },

    #[error("field depends on coordinates outside the required level (deviation {0:.3e})")]
    Measurability(f64),

    #[error("implicit step is not contractive: c*dt = {0} >= 1")]
    StepSize(f64),

    #[error("inner fixed-point iteration did not reach tolerance within {max_iter} steps (last update {last_update:.3e})")]
    InnerIteration { max_iter: usize, last_update: f64 },

    #[error("Picard iteration did not converge within {max_iter} steps; contraction ratios {ratios:?}")]
    PicardDiverged { max_iter: usize, ratios: Vec<f64> },

    #[error("coefficient constant alpha = {alpha} violates the {variant} bound alpha < {bound}")]
    Hypothesis {
        variant: &'static str,
        alpha: f64,
        bound: f64,
    },

    #[error("incomplete solver state: {0}")]
    IncompleteState(String),

    #[error("input field is not of the admissible structural form: {0}")]
    StructuralInput(String),

    #[error("non-contraction: {0}")]
    NonContraction(String),

    #[error("precondition: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
