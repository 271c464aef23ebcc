use std::path::PathBuf;

use crate::skeleton::JointId;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input, bad configuration, or a violated precondition.
    Validation,
    /// Geometrically unusable data (collapsed torso, too few joints).
    Degenerate,
    /// Training produced a non-finite loss.
    Divergence,
    /// Failure writing output.
    Output,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("frame {frame}: {message}")]
    Frame { frame: usize, message: String },

    #[error("frame {frame}: missing joint {joint}")]
    MissingJoint { frame: usize, joint: JointId },

    #[error("frame {frame}: timestamp {timestamp} does not increase on previous {previous}")]
    NonMonotonicTimestamp {
        frame: usize,
        timestamp: f64,
        previous: f64,
    },

    #[error("sequence has {0} frames, at least 2 are required")]
    TooFewFrames(usize),

    #[error("degenerate torso ({length:.3e} px) in frame {frame}")]
    DegenerateTorso { frame: String, length: f64 },

    #[error("joint {joint} is occluded in frame {frame}")]
    Occluded { frame: String, joint: JointId },

    #[error("frame {frame}: only {usable} usable joints, {required} required")]
    TooFewJoints {
        frame: String,
        usable: usize,
        required: usize,
    },

    #[error("joint {0} has no interior angle (it is an end joint)")]
    NoAngle(JointId),

    #[error("zero-length bone at {joint} in frame {frame}")]
    DegenerateBone { frame: String, joint: JointId },

    #[error("joint vector fields cover different joint sets")]
    MismatchedJoints,

    #[error("joint vector fields share no usable joint pairs")]
    NoSharedPairs,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid motion spec: {0}")]
    MotionSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Write { .. } => ErrorKind::Output,
            Error::DegenerateTorso { .. }
            | Error::TooFewJoints { .. }
            | Error::NoSharedPairs
            | Error::DegenerateBone { .. }
            | Error::Occluded { .. } => ErrorKind::Degenerate,
            Error::Divergence { .. } => ErrorKind::Divergence,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn frame(frame: usize, message: impl Into<String>) -> Self {
        Error::Frame {
            frame,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
