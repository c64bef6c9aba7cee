use std::path::PathBuf;

/// Errors raised by the simulation, localization and training routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value is out of its admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric operation was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The dispersive channel needs more room than the signal provides.
    #[error(
        "delay spread of {spread_samples} samples exceeds the signal length of {len} samples; \
         pad the input by at least {required_padding} samples"
    )]
    DelaySpread {
        spread_samples: usize,
        len: usize,
        required_padding: usize,
    },

    #[error("no impact detected: no energy window crosses the threshold {threshold:e}")]
    NoImpact { threshold: f64 },

    #[error("ambiguous TDoA on channel {channel}: peak ratio {ratio:.3} below {min_ratio}")]
    AmbiguousTdoa {
        channel: usize,
        ratio: f64,
        min_ratio: f64,
    },

    #[error("position solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        best: [f64; 2],
        residual: f64,
    },

    #[error("label of length {label_len} needs {required} frames, only {frames} available")]
    InfeasibleLabel {
        label_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("recognizer training stopped at CER {cer:.4} after {epochs} epochs")]
    TrainingFailed { cer: f64, epochs: usize },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
