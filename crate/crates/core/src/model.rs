//! In-memory data model: layer descriptors, activation traces and datasets.
//!
//! Activations are stored as `f32`. Convolutional feature maps are flattened
//! in row-major (C) order before they enter a trace, so the exporter and the
//! engine always agree on element positions.

use std::collections::HashSet;
use std::fmt;

use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier assigned by the exporter.
pub type SampleId = u32;

/// Dense class id in `0..C`.
pub type ClassId = u16;

/// Largest number of classes representable; `0xFFFF` is reserved as the
/// "no prediction" marker in TARD files.
pub const MAX_CLASSES: usize = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_index: usize,
    pub dim: usize,
    pub name: String,
}

impl LayerSpec {
    /// A layer spec with the default name `layer_{index}`.
    pub fn new(layer_index: usize, dim: usize) -> Self {
        Self {
            layer_index,
            dim,
            name: format!("layer_{layer_index}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Repository,
    Queryset,
}

impl DatasetKind {
    pub fn to_byte(self) -> u8 {
        match self {
            DatasetKind::Repository => 0,
            DatasetKind::Queryset => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DatasetKind::Repository),
            1 => Some(DatasetKind::Queryset),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetKind::Repository => f.write_str("repository"),
            DatasetKind::Queryset => f.write_str("queryset"),
        }
    }
}

/// One sample's activations at every emitted layer plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub sample_id: SampleId,
    pub activations: Vec<Vec<f32>>,
    pub true_label: ClassId,
    pub predicted_label: Option<ClassId>,
    pub softmax_confidence: Option<f32>,
}

impl ActivationTrace {
    /// A training-repository trace (no prediction metadata).
    pub fn training(sample_id: SampleId, activations: Vec<Vec<f32>>, true_label: ClassId) -> Self {
        Self {
            sample_id,
            activations,
            true_label,
            predicted_label: None,
            softmax_confidence: None,
        }
    }

    /// A query trace carrying the model's prediction and its softmax confidence.
    pub fn query(
        sample_id: SampleId,
        activations: Vec<Vec<f32>>,
        true_label: ClassId,
        predicted_label: ClassId,
        softmax_confidence: f32,
    ) -> Self {
        Self {
            sample_id,
            activations,
            true_label,
            predicted_label: Some(predicted_label),
            softmax_confidence: Some(softmax_confidence),
        }
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.predicted_label.map(|p| p == self.true_label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_layers: usize,
    pub num_samples: usize,
    pub num_classes: usize,
    pub layer_specs: Vec<LayerSpec>,
    pub kind: DatasetKind,
}

impl DatasetHeader {
    /// Builds a header with default layer names from a list of widths.
    pub fn new(kind: DatasetKind, num_samples: usize, num_classes: usize, dims: &[usize]) -> Self {
        Self {
            num_layers: dims.len(),
            num_samples,
            num_classes,
            layer_specs: dims
                .iter()
                .enumerate()
                .map(|(i, &d)| LayerSpec::new(i, d))
                .collect(),
            kind,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.layer_specs.iter().map(|s| s.dim).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::InvalidHeader(
                "at least one layer is required".into(),
            ));
        }
        if self.num_samples < 1 {
            return Err(Error::InvalidHeader(
                "at least one sample is required".into(),
            ));
        }
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(Error::InvalidHeader(format!(
                "class count {} outside 2..={MAX_CLASSES}",
                self.num_classes
            )));
        }
        if self.layer_specs.len() != self.num_layers {
            return Err(Error::InvalidHeader(format!(
                "{} layer specs for {} layers",
                self.layer_specs.len(),
                self.num_layers
            )));
        }
        for (i, spec) in self.layer_specs.iter().enumerate() {
            if spec.layer_index != i {
                return Err(Error::InvalidHeader(format!(
                    "layer indices must be contiguous from 0; position {i} holds index {}",
                    spec.layer_index
                )));
            }
            if spec.dim < 1 {
                return Err(Error::InvalidHeader(format!("layer {i} has zero width")));
            }
        }
        Ok(())
    }

    /// Checks that `other` describes the same layer geometry and class set.
    pub fn check_compatible(&self, other: &DatasetHeader) -> Result<()> {
        if self.num_layers != other.num_layers {
            return Err(Error::InvalidHeader(format!(
                "layer count {} does not match {}",
                other.num_layers, self.num_layers
            )));
        }
        for (a, b) in self.layer_specs.iter().zip(&other.layer_specs) {
            if a.dim != b.dim {
                return Err(Error::DimensionMismatch {
                    sample_id: None,
                    layer: Some(a.layer_index),
                    expected: a.dim,
                    found: b.dim,
                });
            }
        }
        if self.num_classes != other.num_classes {
            return Err(Error::InvalidHeader(format!(
                "class count {} does not match {}",
                other.num_classes, self.num_classes
            )));
        }
        Ok(())
    }
}

/// Checks a trace against a (well-formed) header.
pub fn validate_trace(trace: &ActivationTrace, header: &DatasetHeader) -> Result<()> {
    let sample_id = trace.sample_id;
    if trace.activations.len() != header.num_layers {
        return Err(Error::LayerCountMismatch {
            sample_id,
            expected: header.num_layers,
            found: trace.activations.len(),
        });
    }
    for (layer, (values, spec)) in trace
        .activations
        .iter()
        .zip(&header.layer_specs)
        .enumerate()
    {
        if values.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                sample_id: Some(sample_id),
                layer: Some(layer),
                expected: spec.dim,
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                sample_id,
                layer,
                index,
            });
        }
    }
    check_label(sample_id, trace.true_label, header.num_classes)?;
    if let Some(p) = trace.predicted_label {
        check_label(sample_id, p, header.num_classes)?;
    }
    if let Some(c) = trace.softmax_confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidConfidence {
                sample_id,
                value: c,
            });
        }
    }
    if header.kind == DatasetKind::Queryset
        && (trace.predicted_label.is_none() || trace.softmax_confidence.is_none())
    {
        return Err(Error::MissingPredictionFields { sample_id });
    }
    Ok(())
}

fn check_label(sample_id: SampleId, label: ClassId, num_classes: usize) -> Result<()> {
    if usize::from(label) >= num_classes {
        return Err(Error::LabelOutOfRange {
            sample_id,
            label: u32::from(label),
            num_classes,
        });
    }
    Ok(())
}

/// Row-major flattening of a multi-axis activation tensor.
pub fn flatten_activation(tensor: ArrayViewD<'_, f32>) -> Result<Vec<f32>> {
    if tensor.ndim() == 0 || tensor.is_empty() {
        return Err(Error::EmptyTensor);
    }
    // `iter` walks logical (row-major) order regardless of memory strides.
    Ok(tensor.iter().copied().collect())
}

/// A header plus its traces, as read from or written to a TARD file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub traces: Vec<ActivationTrace>,
}

impl Dataset {
    /// Validates the header, every trace, trace count and sample id uniqueness.
    pub fn new(header: DatasetHeader, traces: Vec<ActivationTrace>) -> Result<Self> {
        let ds = Self { header, traces };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.traces.len() != self.header.num_samples {
            return Err(Error::InvalidHeader(format!(
                "header declares {} samples, found {}",
                self.header.num_samples,
                self.traces.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.traces.len());
        for t in &self.traces {
            validate_trace(t, &self.header)?;
            if !seen.insert(t.sample_id) {
                return Err(Error::DuplicateSampleId(t.sample_id));
            }
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: DatasetKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind,
                found: self.header.kind,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}
