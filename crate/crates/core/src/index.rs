//! Training Activation Repository (TAR) and exact per-layer k-NN retrieval.
//!
//! Every layer is a contiguous `N × dim` matrix. A query scans it in blocks,
//! keeping the `k` best rows in a bounded max-heap ordered by
//! `(distance, sample_id)`, so equal distances resolve to the smaller id.
//! Bray–Curtis is not a metric, so no pruning bound is ever assumed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{is_zero_norm, DistanceKind};
use crate::error::{Error, Result};
use crate::format::{self, RawTard, SampleMeta};
use crate::model::{
    validate_trace, ActivationTrace, ClassId, Dataset, DatasetHeader, DatasetKind, SampleId,
};

const SCAN_BLOCK: usize = 256;

/// One retrieved training sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    #[serde(rename = "id")]
    pub sample_id: SampleId,
    pub label: ClassId,
    pub distance: f64,
}

/// Prediction Behavior Analysis Table: the `k` nearest training samples of
/// one query at every layer, each row sorted by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBehaviorTable {
    pub query_id: SampleId,
    pub k: usize,
    pub rows: Vec<Vec<NeighborRecord>>,
    /// Layers where the query vector had zero norm under the cosine kernel.
    pub zero_norm_layers: Vec<usize>,
}

impl PredictionBehaviorTable {
    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    /// The table for a smaller neighbourhood. Because rows are totally ordered
    /// by `(distance, sample_id)`, the top-`k` set is a prefix of the top-`K` set.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if k > self.k {
            return Err(Error::KTooLarge { k, max: self.k });
        }
        Ok(Self {
            query_id: self.query_id,
            k,
            rows: self.rows.iter().map(|r| r[..k].to_vec()).collect(),
            zero_norm_layers: self.zero_norm_layers.clone(),
        })
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    distance: f64,
    sample_id: SampleId,
    row: usize,
}

impl Candidate {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.sample_id.cmp(&other.sample_id))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingActivationRepository {
    header: DatasetHeader,
    layers: Vec<Vec<f32>>,
    labels: Vec<ClassId>,
    sample_ids: Vec<SampleId>,
}

impl TrainingActivationRepository {
    /// Builds a repository from validated training traces, preserving order.
    pub fn build(traces: &[ActivationTrace], header: &DatasetHeader) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::EmptyRepository);
        }
        if header.kind != DatasetKind::Repository {
            return Err(Error::KindMismatch {
                expected: DatasetKind::Repository,
                found: header.kind,
            });
        }
        let mut header = header.clone();
        header.num_samples = traces.len();
        header.validate()?;
        let mut seen = HashSet::with_capacity(traces.len());
        for t in traces {
            validate_trace(t, &header)?;
            if !seen.insert(t.sample_id) {
                return Err(Error::DuplicateSampleId(t.sample_id));
            }
        }
        let layers = header
            .layer_specs
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let mut m = Vec::with_capacity(traces.len() * spec.dim);
                for t in traces {
                    m.extend_from_slice(&t.activations[l]);
                }
                m
            })
            .collect();
        Ok(Self {
            header,
            layers,
            labels: traces.iter().map(|t| t.true_label).collect(),
            sample_ids: traces.iter().map(|t| t.sample_id).collect(),
        })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::build(&ds.traces, &ds.header)
    }

    /// Builds directly from a layer-major file image without re-copying traces.
    pub fn from_raw(raw: RawTard) -> Result<Self> {
        if raw.kind != DatasetKind::Repository {
            return Err(Error::KindMismatch {
                expected: DatasetKind::Repository,
                found: raw.kind,
            });
        }
        let header = raw.header();
        header.validate()?;
        let mut seen = HashSet::with_capacity(raw.meta.len());
        for m in &raw.meta {
            if usize::from(m.true_label) >= header.num_classes {
                return Err(Error::LabelOutOfRange {
                    sample_id: m.sample_id,
                    label: u32::from(m.true_label),
                    num_classes: header.num_classes,
                });
            }
            if !seen.insert(m.sample_id) {
                return Err(Error::DuplicateSampleId(m.sample_id));
            }
        }
        for (l, (&d, layer)) in raw.dims.iter().zip(&raw.layers).enumerate() {
            if let Some(pos) = layer.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    sample_id: raw.meta[pos / d].sample_id,
                    layer: l,
                    index: pos % d,
                });
            }
        }
        Ok(Self {
            header,
            labels: raw.meta.iter().map(|m| m.true_label).collect(),
            sample_ids: raw.meta.iter().map(|m| m.sample_id).collect(),
            layers: raw.layers,
        })
    }

    pub fn to_raw(&self) -> RawTard {
        RawTard {
            kind: DatasetKind::Repository,
            num_classes: self.header.num_classes,
            dims: self.header.dims(),
            meta: self
                .sample_ids
                .iter()
                .zip(&self.labels)
                .map(|(&sample_id, &true_label)| SampleMeta {
                    sample_id,
                    true_label,
                    predicted_label: None,
                    softmax_confidence: None,
                })
                .collect(),
            layers: self.layers.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        format::save_raw(path, &self.to_raw())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_raw(format::load_raw(path)?)
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[SampleId] {
        &self.sample_ids
    }

    /// The activation matrix of one layer (`N × dim`, row-major).
    pub fn layer_matrix(&self, layer: usize) -> Option<&[f32]> {
        self.layers.get(layer).map(Vec::as_slice)
    }

    pub fn row(&self, layer: usize, index: usize) -> &[f32] {
        let d = self.header.layer_specs[layer].dim;
        &self.layers[layer][index * d..(index + 1) * d]
    }

    /// Exact top-`k` search at one layer.
    pub fn query_layer(
        &self,
        layer: usize,
        query: &[f32],
        k: usize,
        metric: DistanceKind,
    ) -> Result<Vec<NeighborRecord>> {
        self.query_layer_excluding(layer, query, k, metric, None)
    }

    /// Like [`query_layer`](Self::query_layer), optionally skipping one
    /// training sample id (for self-query experiments).
    pub fn query_layer_excluding(
        &self,
        layer: usize,
        query: &[f32],
        k: usize,
        metric: DistanceKind,
        exclude: Option<SampleId>,
    ) -> Result<Vec<NeighborRecord>> {
        let spec = self
            .header
            .layer_specs
            .get(layer)
            .ok_or(Error::LayerOutOfRange {
                layer,
                num_layers: self.header.num_layers,
            })?;
        if query.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                sample_id: None,
                layer: Some(layer),
                expected: spec.dim,
                found: query.len(),
            });
        }
        let excluded = exclude.is_some_and(|id| self.sample_ids.contains(&id));
        let available = self.len() - usize::from(excluded);
        if k == 0 {
            return Err(Error::ZeroK);
        }
        if k > available {
            return Err(Error::KTooLarge { k, max: available });
        }

        let dim = spec.dim;
        let matrix = &self.layers[layer];
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut block = [0.0f64; SCAN_BLOCK];
        for (b, chunk) in matrix.chunks(SCAN_BLOCK * dim).enumerate() {
            let base = b * SCAN_BLOCK;
            let rows = chunk.len() / dim;
            for (slot, row) in block.iter_mut().zip(chunk.chunks_exact(dim)) {
                *slot = metric.eval(query, row);
            }
            for (offset, &distance) in block[..rows].iter().enumerate() {
                let row = base + offset;
                let sample_id = self.sample_ids[row];
                if exclude == Some(sample_id) {
                    continue;
                }
                let cand = Candidate {
                    distance,
                    sample_id,
                    row,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if let Some(mut worst) = heap.peek_mut() {
                    if cand < *worst {
                        *worst = cand;
                    }
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| NeighborRecord {
                sample_id: c.sample_id,
                label: self.labels[c.row],
                distance: c.distance,
            })
            .collect())
    }

    /// One `query_layer` call per layer of the query trace.
    pub fn build_pbat(
        &self,
        query: &ActivationTrace,
        k: usize,
        metric: DistanceKind,
    ) -> Result<PredictionBehaviorTable> {
        self.build_pbat_excluding(query, k, metric, None)
    }

    pub fn build_pbat_excluding(
        &self,
        query: &ActivationTrace,
        k: usize,
        metric: DistanceKind,
        exclude: Option<SampleId>,
    ) -> Result<PredictionBehaviorTable> {
        if query.activations.len() != self.num_layers() {
            return Err(Error::LayerCountMismatch {
                sample_id: query.sample_id,
                expected: self.num_layers(),
                found: query.activations.len(),
            });
        }
        let rows = query
            .activations
            .iter()
            .enumerate()
            .map(|(l, q)| {
                self.query_layer_excluding(l, q, k, metric, exclude)
                    .map_err(|e| match e {
                        Error::DimensionMismatch {
                            layer,
                            expected,
                            found,
                            ..
                        } => Error::DimensionMismatch {
                            sample_id: Some(query.sample_id),
                            layer,
                            expected,
                            found,
                        },
                        other => other,
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let zero_norm_layers = if metric == DistanceKind::Cosine {
            query
                .activations
                .iter()
                .enumerate()
                .filter(|(_, q)| is_zero_norm(q))
                .map(|(l, _)| l)
                .collect()
        } else {
            Vec::new()
        };
        Ok(PredictionBehaviorTable {
            query_id: query.sample_id,
            k,
            rows,
            zero_norm_layers,
        })
    }

    /// PBATs for many queries, computed in parallel; output order matches input.
    pub fn build_pbats(
        &self,
        queries: &[ActivationTrace],
        k: usize,
        metric: DistanceKind,
    ) -> Result<Vec<PredictionBehaviorTable>> {
        queries
            .par_iter()
            .map(|q| self.build_pbat(q, k, metric))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_repo() -> TrainingActivationRepository {
        let traces: Vec<_> = (0..5)
            .map(|i| ActivationTrace::training(i, vec![vec![i as f32]], (i % 2) as ClassId))
            .collect();
        let h = DatasetHeader::new(DatasetKind::Repository, 5, 2, &[1]);
        TrainingActivationRepository::build(&traces, &h).unwrap()
    }

    #[test]
    fn line_example() {
        let repo = line_repo();
        let got = repo
            .query_layer(0, &[2.1], 2, DistanceKind::Euclidean)
            .unwrap();
        assert_eq!(
            got.iter().map(|r| r.sample_id).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert!((got[0].distance - 0.1).abs() < 1e-6);
        assert!((got[1].distance - 0.9).abs() < 1e-6);
    }

    #[test]
    fn single_sample_repository() {
        let h = DatasetHeader::new(DatasetKind::Repository, 1, 3, &[2]);
        let repo = TrainingActivationRepository::build(
            &[ActivationTrace::training(42, vec![vec![1.0, 0.0]], 2)],
            &h,
        )
        .unwrap();
        let got = repo
            .query_layer(0, &[0.0, 1.0], 1, DistanceKind::BrayCurtis)
            .unwrap();
        assert_eq!(
            got,
            vec![NeighborRecord {
                sample_id: 42,
                label: 2,
                distance: 1.0
            }]
        );
    }

    #[test]
    fn ties_break_on_sample_id() {
        let h = DatasetHeader::new(DatasetKind::Repository, 4, 2, &[1]);
        let traces = vec![
            ActivationTrace::training(30, vec![vec![1.0]], 0),
            ActivationTrace::training(10, vec![vec![-1.0]], 1),
            ActivationTrace::training(20, vec![vec![1.0]], 0),
            ActivationTrace::training(5, vec![vec![3.0]], 1),
        ];
        let repo = TrainingActivationRepository::build(&traces, &h).unwrap();
        let got = repo
            .query_layer(0, &[0.0], 3, DistanceKind::Euclidean)
            .unwrap();
        assert_eq!(
            got.iter().map(|r| r.sample_id).collect::<Vec<_>>(),
            vec![10, 20, 30]
        );
    }

    #[test]
    fn errors() {
        let repo = line_repo();
        assert!(matches!(
            repo.query_layer(0, &[0.0], 6, DistanceKind::Euclidean),
            Err(Error::KTooLarge { k: 6, max: 5 })
        ));
        assert!(matches!(
            repo.query_layer(1, &[0.0], 1, DistanceKind::Euclidean),
            Err(Error::LayerOutOfRange {
                layer: 1,
                num_layers: 1
            })
        ));
        assert!(matches!(
            repo.query_layer(0, &[0.0, 1.0], 1, DistanceKind::Euclidean),
            Err(Error::DimensionMismatch {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            repo.query_layer(0, &[0.0], 0, DistanceKind::Euclidean),
            Err(Error::ZeroK)
        ));
    }

    #[test]
    fn build_errors() {
        let h = DatasetHeader::new(DatasetKind::Repository, 1, 2, &[1]);
        assert!(matches!(
            TrainingActivationRepository::build(&[], &h),
            Err(Error::EmptyRepository)
        ));
        let t = ActivationTrace::training(7, vec![vec![0.0]], 0);
        assert!(matches!(
            TrainingActivationRepository::build(&[t.clone(), t], &h),
            Err(Error::DuplicateSampleId(7))
        ));
    }

    #[test]
    fn build_preserves_order_and_layout() {
        let h = DatasetHeader::new(DatasetKind::Repository, 3, 2, &[2, 1]);
        let traces: Vec<_> = (0..3u32)
            .map(|i| {
                ActivationTrace::training(i + 10, vec![vec![i as f32, 1.0], vec![-(i as f32)]], 1)
            })
            .collect();
        let repo = TrainingActivationRepository::build(&traces, &h).unwrap();
        assert_eq!(
            repo.layer_matrix(0).unwrap(),
            &[0.0, 1.0, 1.0, 1.0, 2.0, 1.0]
        );
        assert_eq!(repo.layer_matrix(1).unwrap(), &[0.0, -1.0, -2.0]);
        assert_eq!(repo.sample_ids(), &[10, 11, 12]);
    }

    #[test]
    fn exclusion() {
        let repo = line_repo();
        let got = repo
            .query_layer_excluding(0, &[2.0], 2, DistanceKind::Euclidean, Some(2))
            .unwrap();
        assert_eq!(
            got.iter().map(|r| r.sample_id).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert!(repo
            .query_layer_excluding(0, &[2.0], 5, DistanceKind::Euclidean, Some(2))
            .is_err());
    }

    #[test]
    fn truncation_is_prefix() {
        let repo = line_repo();
        let q = ActivationTrace::query(99, vec![vec![2.4]], 0, 0, 0.5);
        let full = repo.build_pbat(&q, 5, DistanceKind::Euclidean).unwrap();
        let small = repo.build_pbat(&q, 3, DistanceKind::Euclidean).unwrap();
        assert_eq!(full.truncated(3).unwrap(), small);
        assert!(full.truncated(6).is_err());
    }

    #[test]
    fn cosine_zero_norm_flagged() {
        let repo = line_repo();
        let q = ActivationTrace::query(1, vec![vec![0.0]], 0, 0, 0.5);
        let p = repo.build_pbat(&q, 2, DistanceKind::Cosine).unwrap();
        assert_eq!(p.zero_norm_layers, vec![0]);
        assert!(p.rows[0].iter().all(|r| r.distance == 1.0));
    }
}
