//! The evaluation protocol: pick `k` per measure on a validation split, then
//! compare the combiners on a held-out test split.
//!
//! Queries are ordered by `query_id`. The seeded split puts 20% in test; of
//! the remaining 80%, 20% is validation. The sweep fits on the train part and
//! scores validation. Final models fit on train ∪ validation and score test.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::evaluation::{
    scored, split_dataset, Baselines, CurveReport, SplitFractions, SplitIndices,
};
use crate::index::{PredictionBehaviorTable, TrainingActivationRepository};
use crate::logistic::{fit, FeatureSubsetSpec, FitOptions, LogisticModel};
use crate::metrics::{build_features, QueryMeta, UqFeatureVector};
use crate::model::{ActivationTrace, Dataset, DatasetKind, SampleId};

pub const DEFAULT_K_VALUES: [usize; 4] = [3, 5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Auroc,
    AuprPos,
    AuprNeg,
}

impl SelectionMetric {
    pub fn pick(self, r: &SweepRow) -> f64 {
        match self {
            SelectionMetric::Auroc => r.auroc,
            SelectionMetric::AuprPos => r.aupr_pos,
            SelectionMetric::AuprNeg => r.aupr_neg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "LU")]
    Lu,
}

impl Measure {
    pub fn subset(self) -> FeatureSubsetSpec {
        match self {
            Measure::Dc => FeatureSubsetSpec::DC,
            Measure::Lu => FeatureSubsetSpec::LU,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Dc => "DC",
            Measure::Lu => "LU",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub distance: DistanceKind,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    pub fit: FitOptions,
    pub split: SplitFractions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_values: DEFAULT_K_VALUES.to_vec(),
            distance: DistanceKind::BrayCurtis,
            seed: 0,
            selection_metric: SelectionMetric::Auroc,
            fit: FitOptions::default(),
            split: SplitFractions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, repository_size: usize) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::InvalidConfig("k_values must not be empty".into()));
        }
        for &k in &self.k_values {
            if k == 0 {
                return Err(Error::ZeroK);
            }
            if k > repository_size {
                return Err(Error::KTooLarge {
                    k,
                    max: repository_size,
                });
            }
        }
        Ok(())
    }
}

/// PBATs at the largest neighbourhood needed, for every query in `query_id`
/// order. Smaller neighbourhoods are exact prefixes, so one retrieval serves
/// every `k`.
#[derive(Debug, Clone)]
pub struct ScoredQuerySet {
    pbats: Vec<PredictionBehaviorTable>,
    metas: Vec<QueryMeta>,
    num_classes: usize,
    distance: DistanceKind,
    k_max: usize,
}

impl ScoredQuerySet {
    pub fn compute(
        tar: &TrainingActivationRepository,
        queries: &Dataset,
        k_max: usize,
        distance: DistanceKind,
    ) -> Result<Self> {
        queries.expect_kind(DatasetKind::Queryset)?;
        tar.header().check_compatible(&queries.header)?;
        if k_max == 0 {
            return Err(Error::ZeroK);
        }
        if k_max > tar.len() {
            return Err(Error::KTooLarge {
                k: k_max,
                max: tar.len(),
            });
        }
        let mut ordered: Vec<&ActivationTrace> = queries.traces.iter().collect();
        ordered.sort_by_key(|t| t.sample_id);
        let metas = ordered
            .iter()
            .map(|t| match (t.predicted_label, t.softmax_confidence) {
                (Some(predicted_label), Some(softmax_confidence)) => Ok(QueryMeta {
                    softmax_confidence,
                    predicted_label,
                    true_label: t.true_label,
                }),
                _ => Err(Error::MissingPredictionFields {
                    sample_id: t.sample_id,
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let pbats = ordered
            .par_iter()
            .map(|q| tar.build_pbat(q, k_max, distance))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pbats,
            metas,
            num_classes: tar.num_classes(),
            distance,
            k_max,
        })
    }

    pub fn len(&self) -> usize {
        self.pbats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pbats.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn distance(&self) -> DistanceKind {
        self.distance
    }

    pub fn query_ids(&self) -> Vec<SampleId> {
        self.pbats.iter().map(|p| p.query_id).collect()
    }

    pub fn correctness(&self) -> Vec<bool> {
        self.metas
            .iter()
            .map(|m| m.predicted_label == m.true_label)
            .collect()
    }

    pub fn pbats(&self, k: usize) -> Result<Vec<PredictionBehaviorTable>> {
        self.pbats.iter().map(|p| p.truncated(k)).collect()
    }

    /// Feature vectors with DC computed at `k_dc` and LU at `k_lu`.
    pub fn features(&self, k_dc: usize, k_lu: usize) -> Result<Vec<UqFeatureVector>> {
        self.pbats
            .par_iter()
            .zip(&self.metas)
            .map(|(p, &meta)| {
                let mut f = build_features(&p.truncated(k_dc)?, meta, self.num_classes)?;
                if k_lu != k_dc {
                    f.lu = build_features(&p.truncated(k_lu)?, meta, self.num_classes)?.lu;
                }
                Ok(f)
            })
            .collect()
    }
}

fn rows(features: &[UqFeatureVector], idx: &[usize]) -> Vec<UqFeatureVector> {
    idx.iter().map(|&i| features[i].clone()).collect()
}

fn targets(features: &[UqFeatureVector]) -> Vec<bool> {
    features.iter().map(|f| f.correct).collect()
}

/// Fits a combiner on `fit_rows` and evaluates it on `eval_rows`.
fn fit_and_score(
    features: &[UqFeatureVector],
    fit_rows: &[usize],
    eval_rows: &[usize],
    subset: FeatureSubsetSpec,
    options: FitOptions,
) -> Result<(LogisticModel, CurveReport)> {
    let train = rows(features, fit_rows);
    let eval = rows(features, eval_rows);
    let eval_targets = targets(&eval);
    if eval_targets.iter().all(|&t| t) || eval_targets.iter().all(|&t| !t) {
        return Err(Error::SingleClass);
    }
    let model = fit(
        subset.design_matrix(&train).view(),
        &targets(&train),
        subset,
        options,
    )?;
    let scores = model.predict_scores(subset.design_matrix(&eval).view())?;
    let report = CurveReport::evaluate(&scored(&scores, &eval_targets))?;
    Ok((model, report))
}

/// Query ids of each split part, for auditing split discipline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub fractions_test: f64,
    pub fractions_val_of_train: f64,
    pub train: Vec<SampleId>,
    pub val: Vec<SampleId>,
    pub test: Vec<SampleId>,
}

impl SplitRecord {
    fn new(split: &SplitIndices, ids: &[SampleId], seed: u64, fractions: SplitFractions) -> Self {
        let map = |v: &[usize]| v.iter().map(|&i| ids[i]).collect();
        Self {
            seed,
            fractions_test: fractions.test,
            fractions_val_of_train: fractions.val_of_train,
            train: map(&split.train),
            val: map(&split.val),
            test: map(&split.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub measure: Measure,
    pub k: usize,
    pub auroc: f64,
    pub aupr_pos: f64,
    pub aupr_neg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestK {
    pub dc: usize,
    pub lu: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_k: BestK,
    pub selection_metric: SelectionMetric,
    pub distance: DistanceKind,
    pub seed: u64,
    pub n_fit: usize,
    pub n_val: usize,
    pub split: SplitRecord,
}

impl SweepReport {
    pub fn rows_for(&self, measure: Measure) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.measure == measure)
    }
}

/// Validation sweep over `config.k_values` for DC-only and LU-only combiners.
pub fn run_sweep(
    tar: &TrainingActivationRepository,
    queries: &Dataset,
    config: &SweepConfig,
) -> Result<SweepReport> {
    config.validate(tar.len())?;
    let k_max = config.k_values.iter().copied().max().unwrap_or(1);
    let scored_set = ScoredQuerySet::compute(tar, queries, k_max, config.distance)?;
    sweep_scored(&scored_set, config)
}

/// Sweep over precomputed PBATs.
pub fn sweep_scored(set: &ScoredQuerySet, config: &SweepConfig) -> Result<SweepReport> {
    if config.distance != set.distance() {
        return Err(Error::InvalidConfig(format!(
            "PBATs were computed with {} but the sweep asks for {}",
            set.distance(),
            config.distance
        )));
    }
    config.validate(set.k_max())?;
    let split = split_dataset(set.len(), config.split, config.seed)?;
    if split.val.is_empty() || split.train.len() < 2 {
        return Err(Error::TooFewSamples {
            n: set.len(),
            min: 2,
        });
    }
    let mut k_values = config.k_values.clone();
    k_values.sort_unstable();
    k_values.dedup();

    let per_k: Vec<Vec<SweepRow>> = k_values
        .par_iter()
        .map(|&k| {
            let features = set.features(k, k)?;
            [Measure::Dc, Measure::Lu]
                .into_iter()
                .map(|measure| {
                    let (_, r) = fit_and_score(
                        &features,
                        &split.train,
                        &split.val,
                        measure.subset(),
                        config.fit,
                    )?;
                    Ok(SweepRow {
                        measure,
                        k,
                        auroc: r.auroc,
                        aupr_pos: r.aupr_pos,
                        aupr_neg: r.aupr_neg,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<SweepRow> = per_k.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.measure == Measure::Lu, r.k));

    let best = |measure: Measure| -> usize {
        let mut best: Option<(&SweepRow, f64)> = None;
        for r in rows.iter().filter(|r| r.measure == measure) {
            let value = config.selection_metric.pick(r);
            // rows are in ascending k, so strict improvement keeps ties at the smaller k
            if best.is_none_or(|(_, b)| value > b) {
                best = Some((r, value));
            }
        }
        best.map_or(k_values[0], |(r, _)| r.k)
    };
    let best_k = BestK {
        dc: best(Measure::Dc),
        lu: best(Measure::Lu),
    };
    Ok(SweepReport {
        rows,
        best_k,
        selection_metric: config.selection_metric,
        distance: config.distance,
        seed: config.seed,
        n_fit: split.train.len(),
        n_val: split.val.len(),
        split: SplitRecord::new(&split, &set.query_ids(), config.seed, config.split),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KUsed {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dc: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lu: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub auroc: f64,
    pub aupr_pos: f64,
    pub aupr_neg: f64,
    pub baselines: Baselines,
    pub n_pos: usize,
    pub n_neg: usize,
    pub k_used: KUsed,
    pub distance: DistanceKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<LogisticModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub models: Vec<ModelReport>,
    pub k_dc: usize,
    pub k_lu: usize,
    pub distance: DistanceKind,
    pub seed: u64,
    pub num_layers: usize,
    /// DC has one indicator per consecutive-layer transition.
    pub dc_features: usize,
    pub lu_features: usize,
    /// Mean number of decision changes per test query.
    pub mean_dc_count_test: f64,
    pub entropy_unit: String,
    pub aupr_method: String,
    pub fit_options: FitOptions,
    pub split: SplitRecord,
}

impl FinalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Test-split comparison of None, SM, DC, LU, DC+LU and SM+DC+LU.
pub fn run_final(
    tar: &TrainingActivationRepository,
    queries: &Dataset,
    k_dc: usize,
    k_lu: usize,
    config: &SweepConfig,
) -> Result<FinalReport> {
    let set = ScoredQuerySet::compute(tar, queries, k_dc.max(k_lu), config.distance)?;
    final_scored(&set, k_dc, k_lu, config)
}

pub fn final_scored(
    set: &ScoredQuerySet,
    k_dc: usize,
    k_lu: usize,
    config: &SweepConfig,
) -> Result<FinalReport> {
    if k_dc == 0 || k_lu == 0 {
        return Err(Error::ZeroK);
    }
    let split = split_dataset(set.len(), config.split, config.seed)?;
    let fit_rows = split.fit_rows();
    let features = set.features(k_dc, k_lu)?;
    let test = rows(&features, &split.test);
    let test_targets = targets(&test);
    let n_pos = test_targets.iter().filter(|&&t| t).count();
    let n_neg = test_targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let baselines = Baselines::for_counts(n_pos, n_neg);
    let num_layers = features.first().map_or(0, |f| f.lu.len());

    let mut models = vec![ModelReport {
        name: "None".into(),
        auroc: baselines.auroc,
        aupr_pos: baselines.aupr_pos,
        aupr_neg: baselines.aupr_neg,
        baselines,
        n_pos,
        n_neg,
        k_used: KUsed { dc: None, lu: None },
        distance: config.distance,
        seed: config.seed,
        columns: None,
        model: None,
    }];
    let fitted = FeatureSubsetSpec::STANDARD
        .par_iter()
        .map(|&subset| {
            let (model, r) = fit_and_score(&features, &fit_rows, &split.test, subset, config.fit)?;
            Ok(ModelReport {
                name: subset.to_string(),
                auroc: r.auroc,
                aupr_pos: r.aupr_pos,
                aupr_neg: r.aupr_neg,
                baselines: r.baselines,
                n_pos: r.n_pos,
                n_neg: r.n_neg,
                k_used: KUsed {
                    dc: subset.use_dc.then_some(k_dc),
                    lu: subset.use_lu.then_some(k_lu),
                },
                distance: config.distance,
                seed: config.seed,
                columns: Some(subset.column_names(num_layers)),
                model: Some(model),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    models.extend(fitted);

    let mean_dc_count_test =
        test.iter().map(|f| f.dc_count() as f64).sum::<f64>() / test.len() as f64;
    Ok(FinalReport {
        models,
        k_dc,
        k_lu,
        distance: config.distance,
        seed: config.seed,
        num_layers,
        dc_features: num_layers.saturating_sub(1),
        lu_features: num_layers,
        mean_dc_count_test,
        entropy_unit: "nats".into(),
        aupr_method: "average_precision_tie_grouped".into(),
        fit_options: config.fit,
        split: SplitRecord::new(&split, &set.query_ids(), config.seed, config.split),
    })
}

/// Test-split scores of a fitted model, for curve dumps.
pub fn test_scores(
    set: &ScoredQuerySet,
    k_dc: usize,
    k_lu: usize,
    config: &SweepConfig,
    model: &LogisticModel,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let split = split_dataset(set.len(), config.split, config.seed)?;
    let features = set.features(k_dc, k_lu)?;
    let test = rows(&features, &split.test);
    let scores = model.predict_scores(model.subset.design_matrix(&test).view())?;
    Ok((scores, targets(&test)))
}

/// Plain-text sweep table, one block per measure.
pub fn format_sweep_table(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Validation sweep ({}, selection by {:?}, n_fit={}, n_val={})\n",
        report.distance, report.selection_metric, report.n_fit, report.n_val
    ));
    out.push_str(&format!(
        "{:<8}{:>5}{:>9}{:>9}{:>9}\n",
        "Measure", "k", "AUROC", "AUPR+", "AUPR-"
    ));
    for measure in [Measure::Dc, Measure::Lu] {
        let best = match measure {
            Measure::Dc => report.best_k.dc,
            Measure::Lu => report.best_k.lu,
        };
        for r in report.rows_for(measure) {
            out.push_str(&format!(
                "{:<8}{:>5}{:>9.2}{:>9.2}{:>9.2}{}\n",
                measure.to_string(),
                r.k,
                100.0 * r.auroc,
                100.0 * r.aupr_pos,
                100.0 * r.aupr_neg,
                if r.k == best { "  *" } else { "" }
            ));
        }
    }
    out
}

/// Plain-text comparison table with percentages to two decimals.
pub fn format_final_table(report: &FinalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Test split ({}, k_dc={}, k_lu={})\n",
        report.distance, report.k_dc, report.k_lu
    ));
    out.push_str(&format!(
        "{:<10}{:>9}{:>9}{:>9}\n",
        "Algorithm", "AUROC", "AUPR+", "AUPR-"
    ));
    for m in &report.models {
        out.push_str(&format!(
            "{:<10}{:>9.2}{:>9.2}{:>9.2}\n",
            m.name,
            100.0 * m.auroc,
            100.0 * m.aupr_pos,
            100.0 * m.aupr_neg
        ));
    }
    out
}
