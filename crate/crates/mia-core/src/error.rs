//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across tensor math, training, and I/O.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes cannot be combined by the named operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// A reduction axis is not valid for the operand's rank.
    AxisOutOfRange { axis: usize, rank: usize },
    /// backward() was asked to differentiate a non-scalar value.
    NonScalarLoss { elements: usize },
    /// A class label lies outside `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// Paired slices have different lengths.
    LengthMismatch { left: usize, right: usize },
    /// A predicted or true class index lies outside `[0, classes)`.
    ClassOutOfRange { value: usize, classes: usize },
    /// An operation that needs at least one element got none.
    EmptyInput(&'static str),
    /// A mask cell held something other than 0.0 or 1.0.
    NonBinaryInput { value: f64 },
    /// A tensor constructor was handed NaN or infinity.
    NonFiniteValue { op: &'static str },
    /// A model builder received incompatible input dimensions.
    BadShape { detail: String },
    /// A training configuration violates its invariants.
    InvalidConfig { detail: String },
    /// The dataset has no samples.
    EmptyDataset,
    MissingFile { path: String },
    /// File length is not a whole number of fixed-size records.
    TruncatedRecord { path: String, length: u64 },
    MissingLabelColumn { column: String },
    NoValidRows { path: String },
    /// Checkpoint file does not start with the expected magic tag.
    BadMagic,
    /// Stored CRC-32 does not match the recomputed one.
    ChecksumMismatch { stored: u32, computed: u32 },
    /// Checkpoint entries disagree with the model skeleton its tag describes.
    ShapeMismatchOnLoad { detail: String },
    Io { path: String, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank-{rank} tensor")
            }
            Error::NonScalarLoss { elements } => {
                write!(f, "loss must be a single element, got {elements}")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::ClassOutOfRange { value, classes } => {
                write!(f, "class index {value} out of range for {classes} classes")
            }
            Error::EmptyInput(what) => write!(f, "{what} must not be empty"),
            Error::NonBinaryInput { value } => {
                write!(f, "expected a binary mask, found value {value}")
            }
            Error::NonFiniteValue { op } => write!(f, "non-finite value in {op}"),
            Error::BadShape { detail } => write!(f, "bad shape: {detail}"),
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::MissingFile { path } => write!(f, "missing file: {path}"),
            Error::TruncatedRecord { path, length } => {
                write!(f, "truncated record in {path}: {length} bytes is not a whole number of records")
            }
            Error::MissingLabelColumn { column } => {
                write!(f, "label column '{column}' not found in header")
            }
            Error::NoValidRows { path } => write!(f, "no valid data rows in {path}"),
            Error::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            Error::ChecksumMismatch { stored, computed } => {
                write!(f, "checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            Error::ShapeMismatchOnLoad { detail } => {
                write!(f, "checkpoint does not match model skeleton: {detail}")
            }
            Error::Io { path, message } => write!(f, "io error on {path}: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// Wrap an io failure with the path it happened on.
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Error {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
