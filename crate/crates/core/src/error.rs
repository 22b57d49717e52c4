use thiserror::Error;

use crate::spectral::SpectralField;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite sample {value} at lattice point ({j1}, {j2})")]
    NonFiniteSample { j1: usize, j2: usize, value: f64 },

    #[error("field has nonzero mean coefficient (|g_0| = {0:e})")]
    NonZeroMean(f64),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "quadrature under-resolved at s = {time:e}: need at least {required} points per axis, got {given}"
    )]
    UnderResolved {
        time: f64,
        required: usize,
        given: usize,
    },

    #[error("non-finite state at step {step} (t = {time})")]
    NonFiniteState {
        step: usize,
        time: f64,
        state: Box<SpectralField>,
    },

    #[error(
        "Picard iteration stopped after {iterations} iterations without reaching tolerance \
         (last increment {last_increment:e}, last contraction factor {last_factor})"
    )]
    PicardNotConverged {
        iterations: usize,
        last_increment: f64,
        last_factor: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
