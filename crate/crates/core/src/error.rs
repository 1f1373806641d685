use std::io;

use crate::model::{DatasetKind, SampleId};

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dataset header: {0}")]
    InvalidHeader(String),

    #[error("sample {sample_id}: expected {expected} layers, found {found}")]
    LayerCountMismatch {
        sample_id: SampleId,
        expected: usize,
        found: usize,
    },

    #[error("DimensionMismatch{}: expected length {expected}, found {found}", location(.sample_id, .layer))]
    DimensionMismatch {
        sample_id: Option<SampleId>,
        layer: Option<usize>,
        expected: usize,
        found: usize,
    },

    #[error("NonFiniteValue: sample {sample_id}, layer {layer}, index {index}")]
    NonFiniteValue {
        sample_id: SampleId,
        layer: usize,
        index: usize,
    },

    #[error("LabelOutOfRange: sample {sample_id} has label {label}, but there are {num_classes} classes")]
    LabelOutOfRange {
        sample_id: SampleId,
        label: u32,
        num_classes: usize,
    },

    #[error(
        "MissingPredictionFields: sample {sample_id} lacks predicted label or softmax confidence"
    )]
    MissingPredictionFields { sample_id: SampleId },

    #[error("sample {sample_id}: softmax confidence {value} outside [0, 1]")]
    InvalidConfidence { sample_id: SampleId, value: f32 },

    #[error("kind mismatch: expected a {expected} file, found a {found} file")]
    KindMismatch {
        expected: DatasetKind,
        found: DatasetKind,
    },

    #[error("EmptyTensor: tensor has no axes or no elements")]
    EmptyTensor,

    #[error("EmptyRepository: at least one training trace is required")]
    EmptyRepository,

    #[error("DuplicateSampleId: sample id {0} appears more than once")]
    DuplicateSampleId(SampleId),

    #[error("KTooLarge: k must be ≤ {max} (got {k})")]
    KTooLarge { k: usize, max: usize },

    #[error("k must be at least 1")]
    ZeroK,

    #[error("LayerOutOfRange: layer {layer} requested, model has {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("EmptyRow: neighbour row is empty")]
    EmptyRow,

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("BadMagic: expected \"TARD\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u8),

    #[error("TruncatedFile: file ends before the declared payload")]
    TruncatedFile,

    #[error("ChecksumMismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("trailing bytes after checksum")]
    TrailingBytes,

    #[error("SingleClassTarget: targets must contain both classes")]
    SingleClassTarget,

    #[error("EmptyFeatures: need at least two rows and one column")]
    EmptyFeatures,

    #[error("NonFiniteFeature: row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },

    #[error("SingleClass: evaluation set must contain both correct and incorrect predictions")]
    SingleClass,

    #[error("NoPositives: the chosen positive class is empty")]
    NoPositives,

    #[error("TooFewSamples: {n} samples, at least {min} required")]
    TooFewSamples { n: usize, min: usize },

    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location(sample_id: &Option<SampleId>, layer: &Option<usize>) -> String {
    match (sample_id, layer) {
        (Some(s), Some(l)) => format!(" (sample {s}, layer {l})"),
        (Some(s), None) => format!(" (sample {s})"),
        (None, Some(l)) => format!(" (layer {l})"),
        (None, None) => String::new(),
    }
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_)
            | Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::TruncatedFile
            | Error::ChecksumMismatch { .. }
            | Error::TrailingBytes
            | Error::Json(_) => ErrorCategory::Io,
            _ => ErrorCategory::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
