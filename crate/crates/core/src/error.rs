use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("flip angle is zero; the effective-field tilt is undefined")]
    DegeneratePulse,

    #[error("fingerprint has zero energy")]
    DegenerateSignal,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty axis {axis}: min {min}, max {max}, step {step}")]
    EmptyAxis {
        axis: &'static str,
        min: f64,
        max: f64,
        step: f64,
    },

    #[error("noise calibration did not converge: target cc {target}, reached {reached}")]
    NoConvergence { target: f64, reached: f64 },

    #[error("bad dictionary format: {0}")]
    Format(String),

    #[error("payload length mismatch: header implies {expected} bytes, file has {actual}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("schedule digest mismatch: file was generated with a different schedule")]
    DigestMismatch,

    #[error("parse error in {path}, line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
