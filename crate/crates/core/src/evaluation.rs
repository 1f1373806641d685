//! ROC / precision–recall evaluation of misclassification detectors.
//!
//! A higher score means "more likely correct". Records sharing a score form
//! one threshold group. AUROC is the Mann–Whitney statistic with ties
//! counted as one half. AUPR is average precision `Σ (R_t − R_{t−1}) · P_t`
//! over descending thresholds, which equals the prevalence exactly when all
//! scores tie.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    /// `true` when the underlying prediction was correct.
    pub label: bool,
}

impl ScoredSample {
    pub fn new(score: f64, label: bool) -> Self {
        Self { score, label }
    }
}

pub fn scored(scores: &[f64], labels: &[bool]) -> Vec<ScoredSample> {
    scores
        .iter()
        .zip(labels)
        .map(|(&score, &label)| ScoredSample { score, label })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    Correct,
    Incorrect,
}

/// Per-threshold counts, highest threshold first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ThresholdGroup {
    threshold: f64,
    pos: usize,
    neg: usize,
}

fn check_scores(samples: &[ScoredSample]) -> Result<()> {
    if let Some(row) = samples.iter().position(|s| !s.score.is_finite()) {
        return Err(Error::NonFiniteFeature { row, column: 0 });
    }
    Ok(())
}

/// Groups records by score in descending order. `positive` selects which label counts as positive.
fn descending_groups(
    samples: &[ScoredSample],
    positive: bool,
    negate: bool,
) -> Vec<ThresholdGroup> {
    let mut keyed: Vec<(f64, bool)> = samples
        .iter()
        .map(|s| (if negate { -s.score } else { s.score }, s.label == positive))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<ThresholdGroup> = Vec::new();
    for (score, is_pos) in keyed {
        match groups.last_mut() {
            // -0.0 and 0.0 share a threshold
            Some(g) if g.threshold == score => {
                if is_pos {
                    g.pos += 1;
                } else {
                    g.neg += 1;
                }
            }
            _ => groups.push(ThresholdGroup {
                threshold: score,
                pos: usize::from(is_pos),
                neg: usize::from(!is_pos),
            }),
        }
    }
    groups
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label).count();
    (pos, samples.len() - pos)
}

/// Probability that a random correct prediction outscores a random incorrect one.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    check_scores(samples)?;
    let (p, n) = class_counts(samples);
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    // ascending sweep: every positive beats all negatives in lower groups
    let mut wins: u128 = 0;
    let mut ties: u128 = 0;
    let mut negs_below: u128 = 0;
    for g in descending_groups(samples, true, false).iter().rev() {
        wins += g.pos as u128 * negs_below;
        ties += g.pos as u128 * g.neg as u128;
        negs_below += g.neg as u128;
    }
    Ok((2 * wins + ties) as f64 / (2 * p as u128 * n as u128) as f64)
}

/// Average precision with the chosen class as positive (scores are negated for `Incorrect`).
pub fn aupr(samples: &[ScoredSample], positive_is: PositiveClass) -> Result<f64> {
    check_scores(samples)?;
    let (positive, negate) = match positive_is {
        PositiveClass::Correct => (true, false),
        PositiveClass::Incorrect => (false, true),
    };
    let total_pos = samples.iter().filter(|s| s.label == positive).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut area = 0.0;
    for g in descending_groups(samples, positive, negate) {
        if g.pos > 0 {
            tp += g.pos;
            fp += g.neg;
            let precision = tp as f64 / (tp + fp) as f64;
            area += g.pos as f64 / total_pos as f64 * precision;
        } else {
            fp += g.neg;
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Counts at a threshold: `score ≥ threshold` predicts "correct".
/// Precision is 1 when nothing is predicted positive; a rate with an empty
/// denominator is 0.
pub fn confusion_at(samples: &[ScoredSample], threshold: f64) -> Confusion {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in samples {
        match (s.score >= threshold, s.label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let tpr = ratio(tp, tp + fn_);
    Confusion {
        tp,
        fp,
        tn,
        fn_,
        tpr,
        fpr: ratio(fp, fp + tn),
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: tpr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// ROC curve from `(0,0)` through every threshold group to `(1,1)`.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<Vec<RocPoint>> {
    check_scores(samples)?;
    let (p, n) = class_counts(samples);
    if p == 0 || n == 0 {
        return Err(Error::SingleClass);
    }
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in descending_groups(samples, true, false) {
        tp += g.pos;
        fp += g.neg;
        points.push(RocPoint {
            threshold: g.threshold,
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(points)
}

/// Precision–recall curve; the first point is the zero-recall convention (precision 1).
pub fn pr_curve(samples: &[ScoredSample], positive_is: PositiveClass) -> Result<Vec<PrPoint>> {
    check_scores(samples)?;
    let (positive, negate) = match positive_is {
        PositiveClass::Correct => (true, false),
        PositiveClass::Incorrect => (false, true),
    };
    let total_pos = samples.iter().filter(|s| s.label == positive).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in descending_groups(samples, positive, negate) {
        tp += g.pos;
        fp += g.neg;
        points.push(PrPoint {
            threshold: if negate { -g.threshold } else { g.threshold },
            recall: tp as f64 / total_pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub auroc: f64,
    pub aupr_pos: f64,
    pub aupr_neg: f64,
}

impl Baselines {
    /// Scores of a detector that carries no information, derived from the evaluated set.
    pub fn for_counts(n_pos: usize, n_neg: usize) -> Self {
        let total = (n_pos + n_neg) as f64;
        Self {
            auroc: 0.5,
            aupr_pos: n_pos as f64 / total,
            aupr_neg: n_neg as f64 / total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub auroc: f64,
    pub aupr_pos: f64,
    pub aupr_neg: f64,
    pub baselines: Baselines,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub roc: Vec<RocPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pr_pos: Vec<PrPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pr_neg: Vec<PrPoint>,
}

impl CurveReport {
    /// Scalars and baselines only.
    pub fn evaluate(samples: &[ScoredSample]) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(samples);
        Ok(Self {
            auroc: auroc(samples)?,
            aupr_pos: aupr(samples, PositiveClass::Correct)?,
            aupr_neg: aupr(samples, PositiveClass::Incorrect)?,
            baselines: Baselines::for_counts(n_pos, n_neg),
            n_pos,
            n_neg,
            roc: Vec::new(),
            pr_pos: Vec::new(),
            pr_neg: Vec::new(),
        })
    }

    /// Scalars plus full curve points.
    pub fn evaluate_with_curves(samples: &[ScoredSample]) -> Result<Self> {
        let mut r = Self::evaluate(samples)?;
        r.roc = roc_curve(samples)?;
        r.pr_pos = pr_curve(samples, PositiveClass::Correct)?;
        r.pr_neg = pr_curve(samples, PositiveClass::Incorrect)?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub test: f64,
    pub val_of_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            test: 0.2,
            val_of_train: 0.2,
        }
    }
}

/// Disjoint index sets. `train` and `val` together form the 80% used to fit
/// combiners; `val` alone drives the choice of `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// `train ∪ val`, sorted.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        all.sort_unstable();
        all
    }
}

pub const MIN_SPLIT_SAMPLES: usize = 5;

/// Seeded shuffle, then contiguous slices: test first, then validation, then
/// train. Test and validation sizes are rounded down. Each part is returned sorted.
pub fn split_dataset(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    if n < MIN_SPLIT_SAMPLES {
        return Err(Error::TooFewSamples {
            n,
            min: MIN_SPLIT_SAMPLES,
        });
    }
    let valid = |f: f64| (0.0..1.0).contains(&f);
    if !valid(fractions.test) || !valid(fractions.val_of_train) {
        return Err(Error::InvalidConfig(format!(
            "split fractions {fractions:?} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * fractions.test).floor() as usize;
    let rest = n - n_test;
    let n_val = (rest as f64 * fractions.val_of_train).floor() as usize;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        test: sorted(&order[..n_test]),
        val: sorted(&order[n_test..n_test + n_val]),
        train: sorted(&order[n_test + n_val..]),
    })
}
