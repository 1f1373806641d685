//! Decision Change (DC) and Layer Uncertainty (LU) from a PBAT.
//!
//! Only neighbour labels drive the metrics; distances are used solely to
//! break ties between equally frequent classes. Entropy is in nats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{NeighborRecord, PredictionBehaviorTable};
use crate::model::{ClassId, SampleId};

/// Per-layer dominant neighbour class and whether its count was shared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominantClassSequence {
    pub modes: Vec<ClassId>,
    pub tie_flags: Vec<bool>,
}

impl DominantClassSequence {
    pub fn from_pbat(pbat: &PredictionBehaviorTable) -> Result<Self> {
        let (modes, tie_flags) = pbat
            .rows
            .iter()
            .map(|row| dominant_class(row))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { modes, tie_flags })
    }
}

/// The most frequent label in a row. Count ties go to the class whose
/// neighbours have the smallest distance sum, then to the smallest class id.
pub fn dominant_class(row: &[NeighborRecord]) -> Result<(ClassId, bool)> {
    if row.is_empty() {
        return Err(Error::EmptyRow);
    }
    let mut by_class: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for r in row {
        by_class.entry(r.label).or_default().push(r.distance);
    }
    let top = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut tied: Vec<(ClassId, f64)> = by_class
        .into_iter()
        .filter(|(_, d)| d.len() == top)
        .map(|(c, mut d)| {
            // canonical order keeps the sum independent of row order
            d.sort_by(f64::total_cmp);
            (c, d.iter().sum())
        })
        .collect();
    let shared = tied.len() > 1;
    tied.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok((tied[0].0, shared))
}

/// `out[t] = 1` iff the dominant class changes between layer `t` and `t + 1`.
pub fn decision_change_vector(modes: &DominantClassSequence) -> Vec<u8> {
    modes
        .modes
        .windows(2)
        .map(|w| u8::from(w[0] != w[1]))
        .collect()
}

/// Shannon entropy (nats) of the label distribution in a row.
pub fn layer_entropy(row: &[NeighborRecord], num_classes: usize) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::EmptyRow);
    }
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for r in row {
        if usize::from(r.label) >= num_classes {
            return Err(Error::LabelOutOfRange {
                sample_id: r.sample_id,
                label: u32::from(r.label),
                num_classes,
            });
        }
        *counts.entry(r.label).or_default() += 1;
    }
    if counts.len() == 1 {
        return Ok(0.0);
    }
    let k = row.len() as f64;
    // summing over sorted counts makes the result invariant to relabelling
    let mut sorted: Vec<usize> = counts.into_values().collect();
    sorted.sort_unstable();
    let h: f64 = sorted
        .iter()
        .map(|&c| {
            let p = c as f64 / k;
            -p * p.ln()
        })
        .sum();
    Ok(h.clamp(0.0, (num_classes as f64).ln()))
}

/// Prediction metadata attached to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMeta {
    pub softmax_confidence: f32,
    pub predicted_label: ClassId,
    pub true_label: ClassId,
}

/// Softmax confidence, per-transition DC indicators and per-layer LU for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqFeatureVector {
    pub query_id: SampleId,
    pub softmax_confidence: f64,
    pub dc: Vec<u8>,
    pub lu: Vec<f64>,
    pub correct: bool,
}

impl UqFeatureVector {
    /// Number of decision changes across the whole network.
    pub fn dc_count(&self) -> usize {
        self.dc.iter().map(|&d| usize::from(d)).sum()
    }
}

pub fn build_features(
    pbat: &PredictionBehaviorTable,
    meta: QueryMeta,
    num_classes: usize,
) -> Result<UqFeatureVector> {
    if !(0.0..=1.0).contains(&meta.softmax_confidence) {
        return Err(Error::InvalidConfidence {
            sample_id: pbat.query_id,
            value: meta.softmax_confidence,
        });
    }
    let modes = DominantClassSequence::from_pbat(pbat)?;
    let lu = pbat
        .rows
        .iter()
        .map(|row| layer_entropy(row, num_classes))
        .collect::<Result<Vec<_>>>()?;
    Ok(UqFeatureVector {
        query_id: pbat.query_id,
        softmax_confidence: f64::from(meta.softmax_confidence),
        dc: decision_change_vector(&modes),
        lu,
        correct: meta.predicted_label == meta.true_label,
    })
}

/// Features whose DC part comes from one neighbourhood size and LU part from another.
pub fn build_features_split_k(
    dc_pbat: &PredictionBehaviorTable,
    lu_pbat: &PredictionBehaviorTable,
    meta: QueryMeta,
    num_classes: usize,
) -> Result<UqFeatureVector> {
    let mut f = build_features(dc_pbat, meta, num_classes)?;
    if lu_pbat.k != dc_pbat.k {
        f.lu = lu_pbat
            .rows
            .iter()
            .map(|row| layer_entropy(row, num_classes))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(labels: &[ClassId]) -> Vec<NeighborRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| NeighborRecord {
                sample_id: i as SampleId,
                label,
                distance: 0.1 * (i + 1) as f64,
            })
            .collect()
    }

    fn oracle_entropy(labels: &[ClassId]) -> f64 {
        let k = labels.len() as f64;
        let mut h = 0.0;
        for c in 0..64 {
            let n = labels.iter().filter(|&&l| l == c).count();
            if n > 0 {
                let p = n as f64 / k;
                h -= p * p.ln();
            }
        }
        h
    }

    #[test]
    fn mode_examples() {
        assert_eq!(dominant_class(&row(&[9, 9, 9, 9, 7])).unwrap(), (9, false));
        assert_eq!(dominant_class(&row(&[4])).unwrap(), (4, false));
        assert!(matches!(dominant_class(&[]), Err(Error::EmptyRow)));
    }

    #[test]
    fn mode_tie_uses_distance_sum() {
        // labels {6,6,0,0,3}; distance sums 6 -> 1.0, 0 -> 1.4
        let d = [0.4, 0.6, 0.65, 0.75, 0.9];
        let labels = [6, 6, 0, 0, 3];
        let r: Vec<_> = labels
            .iter()
            .zip(d)
            .enumerate()
            .map(|(i, (&label, distance))| NeighborRecord {
                sample_id: i as SampleId,
                label,
                distance,
            })
            .collect();
        assert_eq!(dominant_class(&r).unwrap(), (6, true));
    }

    #[test]
    fn mode_tie_falls_back_to_class_id() {
        let r = vec![
            NeighborRecord {
                sample_id: 0,
                label: 5,
                distance: 1.0,
            },
            NeighborRecord {
                sample_id: 1,
                label: 2,
                distance: 1.0,
            },
        ];
        assert_eq!(dominant_class(&r).unwrap(), (2, true));
    }

    #[test]
    fn decision_change_examples() {
        let seq = |m: &[ClassId]| DominantClassSequence {
            modes: m.to_vec(),
            tie_flags: vec![false; m.len()],
        };
        assert_eq!(
            decision_change_vector(&seq(&[8, 8, 9, 9, 9])),
            vec![0, 1, 0, 0]
        );
        assert_eq!(decision_change_vector(&seq(&[3, 3, 3])), vec![0, 0]);
        assert_eq!(decision_change_vector(&seq(&[1, 2, 1, 2])), vec![1, 1, 1]);
        assert!(decision_change_vector(&seq(&[4])).is_empty());
    }

    #[test]
    fn entropy_examples() {
        let h = layer_entropy(&row(&[8, 4, 8, 8, 9]), 10).unwrap();
        let expected = -(0.6f64 * 0.6f64.ln() + 2.0 * 0.2 * 0.2f64.ln());
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 0.950271).abs() < 5e-7);
        let h5 = layer_entropy(&row(&[9, 9, 9, 9, 7]), 10).unwrap();
        assert!((h5 - 0.500402).abs() < 5e-7);
        assert_eq!(layer_entropy(&row(&[3; 7]), 10).unwrap(), 0.0);
        let uniform: Vec<ClassId> = (0..20).map(|i| (i % 10) as ClassId).collect();
        let hu = layer_entropy(&row(&uniform), 10).unwrap();
        assert!((hu - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let c = rng.random_range(2..12usize);
            let k = rng.random_range(1..40usize);
            let labels: Vec<ClassId> = (0..k).map(|_| rng.random_range(0..c) as ClassId).collect();
            let h = layer_entropy(&row(&labels), c).unwrap();
            assert!((h - oracle_entropy(&labels)).abs() < 1e-12);
            assert!(h >= 0.0 && h <= (c as f64).ln());
        }
    }

    #[test]
    fn entropy_rejects_foreign_labels() {
        assert!(layer_entropy(&row(&[0, 4]), 3).is_err());
    }

    #[test]
    fn features_from_worked_rows() {
        let pbat = PredictionBehaviorTable {
            query_id: 17,
            k: 5,
            rows: vec![row(&[8, 4, 8, 8, 9]), row(&[9, 9, 9, 9, 7])],
            zero_norm_layers: vec![],
        };
        let meta = QueryMeta {
            softmax_confidence: 0.93,
            predicted_label: 9,
            true_label: 9,
        };
        let f = build_features(&pbat, meta, 10).unwrap();
        assert_eq!(f.dc, vec![1]);
        assert!((f.lu[0] - 0.950271).abs() < 5e-7);
        assert!((f.lu[1] - 0.500402).abs() < 5e-7);
        assert!(f.correct);
        assert_eq!(f.dc_count(), 1);
    }

    #[test]
    fn unanimous_table_gives_zero_features() {
        let pbat = PredictionBehaviorTable {
            query_id: 1,
            k: 4,
            rows: vec![row(&[2; 4]); 3],
            zero_norm_layers: vec![],
        };
        let meta = QueryMeta {
            softmax_confidence: 1.0,
            predicted_label: 2,
            true_label: 2,
        };
        let f = build_features(&pbat, meta, 5).unwrap();
        assert_eq!(f.dc, vec![0, 0]);
        assert_eq!(f.lu, vec![0.0; 3]);
        assert!(f.correct);
    }

    #[test]
    fn shape_contract() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows = (0..4)
            .map(|_| {
                row(&(0..10)
                    .map(|_| rng.random_range(0..6u16))
                    .collect::<Vec<_>>())
            })
            .collect();
        let pbat = PredictionBehaviorTable {
            query_id: 0,
            k: 10,
            rows,
            zero_norm_layers: vec![],
        };
        let meta = QueryMeta {
            softmax_confidence: 0.5,
            predicted_label: 1,
            true_label: 0,
        };
        let f = build_features(&pbat, meta, 6).unwrap();
        assert_eq!((f.dc.len(), f.lu.len()), (3, 4));
        assert!(!f.correct);
    }
}
