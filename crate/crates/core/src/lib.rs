//! Layer-wise uncertainty estimation from nearest-neighbour label behaviour.
//!
//! A [`TrainingActivationRepository`] stores per-layer activations of the
//! training set. For a query, [`TrainingActivationRepository::build_pbat`]
//! retrieves the `k` nearest training samples at every layer; the resulting
//! [`PredictionBehaviorTable`] yields decision-change (DC) and layer
//! uncertainty (LU) features, which a logistic combiner turns into a
//! correctness score.

pub mod distance;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod export;
pub mod format;
pub mod index;
pub mod logistic;
pub mod metrics;
pub mod model;
pub mod synthetic;

pub use distance::DistanceKind;
pub use error::{Error, ErrorCategory, Result};
pub use evaluation::{
    aupr, auroc, split_dataset, CurveReport, PositiveClass, ScoredSample, SplitFractions,
    SplitIndices,
};
pub use experiment::{run_final, run_sweep, FinalReport, ScoredQuerySet, SweepConfig, SweepReport};
pub use index::{NeighborRecord, PredictionBehaviorTable, TrainingActivationRepository};
pub use logistic::{fit, FeatureSubsetSpec, FitOptions, LogisticModel};
pub use metrics::{
    build_features, decision_change_vector, layer_entropy, DominantClassSequence, UqFeatureVector,
};
pub use model::{
    ActivationTrace, ClassId, Dataset, DatasetHeader, DatasetKind, LayerSpec, SampleId,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
