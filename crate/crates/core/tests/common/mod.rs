//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use layerwise_uq::model::{ActivationTrace, ClassId, DatasetHeader, DatasetKind};
use layerwise_uq::{DistanceKind, NeighborRecord, TrainingActivationRepository};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full sort of all training rows by `(distance, sample_id)`, first `k` kept.
pub fn knn_oracle(
    tar: &TrainingActivationRepository,
    layer: usize,
    query: &[f32],
    k: usize,
    metric: DistanceKind,
) -> Vec<NeighborRecord> {
    let mut all: Vec<NeighborRecord> = (0..tar.len())
        .map(|i| NeighborRecord {
            sample_id: tar.sample_ids()[i],
            label: tar.labels()[i],
            distance: metric.distance(tar.row(layer, i), query).unwrap(),
        })
        .collect();
    all.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap()
            .then(a.sample_id.cmp(&b.sample_id))
    });
    all.truncate(k);
    all
}

/// Shannon entropy in nats by direct summation over the class histogram.
pub fn entropy_oracle(labels: &[ClassId], num_classes: usize) -> f64 {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[usize::from(l)] += 1;
    }
    let k = labels.len() as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / k;
            h -= p * p.ln();
        }
    }
    h
}

/// Pairwise Mann–Whitney statistic: ties count one half.
pub fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Average precision with tied scores admitted as one block: the mean over
/// positives of precision at the lowest threshold that still ranks it.
pub fn average_precision_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        let ranked = scores.iter().filter(|&&s| s >= si).count() as f64;
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| l && s >= si)
            .count() as f64;
        total += tp / ranked;
    }
    total / positives
}

/// Random repository whose coordinates are small integers, so exact distance
/// ties are common.
pub fn random_repository(
    rng: &mut ChaCha8Rng,
    n: usize,
    dims: &[usize],
    num_classes: usize,
    levels: i32,
) -> (Vec<ActivationTrace>, DatasetHeader) {
    let mut ids: Vec<u32> = (0..n as u32).map(|i| i * 3 + 7).collect();
    // shuffle so row order and id order disagree
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let traces = ids
        .into_iter()
        .map(|id| {
            let acts = dims
                .iter()
                .map(|&d| random_vector(rng, d, levels))
                .collect();
            ActivationTrace::training(id, acts, rng.random_range(0..num_classes) as ClassId)
        })
        .collect();
    (
        traces,
        DatasetHeader::new(DatasetKind::Repository, n, num_classes, dims),
    )
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, levels: i32) -> Vec<f32> {
    (0..dim)
        .map(|_| rng.random_range(0..levels) as f32)
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
