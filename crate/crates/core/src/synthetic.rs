//! Deterministic synthetic activations for desk-scale experiments.
//!
//! Each class owns an anchor per layer on a fixed lattice (one-hot when the
//! layer is at least as wide as the class count, base-`b` digits otherwise),
//! scaled by that layer's separation and shifted by a constant `offset`. A
//! sample's activation is its anchor plus Gaussian noise: `noise_scale` in
//! the coordinates the anchors span, `ambient_noise` in the rest. Part of the
//! noise is shared across all layers of a sample (`layer_correlation`), so a
//! sample that leans towards another class does so throughout the network,
//! as real inputs do.
//!
//! Queries get a simulated prediction: the class of the nearest anchor at
//! the last layer. Their softmax confidence is the largest entry of a
//! softmax over negative squared anchor distances at that layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ActivationTrace, ClassId, Dataset, DatasetHeader, DatasetKind, SampleId, MAX_CLASSES,
};

/// Queries of two classes trade anchors from `layer` onwards. At `layer`
/// itself they sit two thirds of the way towards the other anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSwap {
    pub layer: usize,
    pub class_a: ClassId,
    pub class_b: ClassId,
}

const SWAP_BLEND: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dims: Vec<usize>,
    pub n_train: usize,
    pub n_query: usize,
    /// Anchor scale per layer; 0 means no class signal at that layer.
    pub separation: Vec<f64>,
    pub noise_scale: f64,
    /// Per-sample noise multiplier is `exp(scale_dispersion * z)` with `z`
    /// standard normal, so some samples are much harder than others.
    #[serde(default)]
    pub scale_dispersion: f64,
    /// Coordinates the anchors occupy; defaults to `min(dim, num_classes)`.
    /// Fewer coordinates than classes puts the anchors on a base-`b` lattice.
    #[serde(default)]
    pub anchor_span: Option<usize>,
    /// Noise scale of coordinates outside the anchor span.
    #[serde(default)]
    pub ambient_noise: f64,
    /// Constant added to every coordinate.
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_correlation")]
    pub layer_correlation: f64,
    /// Fraction of training labels replaced by a different random class.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub swaps: Vec<AnchorSwap>,
    #[serde(default)]
    pub seed: u64,
}

fn default_correlation() -> f64 {
    0.8
}

impl SyntheticSpec {
    /// `num_layers` layers of width `dim` with the given separations.
    pub fn uniform(
        num_classes: usize,
        dim: usize,
        separation: Vec<f64>,
        n_train: usize,
        n_query: usize,
    ) -> Self {
        Self {
            num_classes,
            dims: vec![dim; separation.len()],
            n_train,
            n_query,
            separation,
            noise_scale: 1.0,
            scale_dispersion: 0.0,
            anchor_span: None,
            ambient_noise: 0.0,
            offset: 0.0,
            layer_correlation: default_correlation(),
            label_noise: 0.0,
            swaps: Vec::new(),
            seed: 0,
        }
    }

    /// The end-to-end benchmark scenario: 10 classes, 4 layers of width 64,
    /// class structure sharpening with depth, positive activations, and
    /// roughly a quarter of the simulated predictions wrong.
    pub fn benchmark(n_train: usize, n_query: usize, seed: u64) -> Self {
        Self {
            layer_correlation: 0.95,
            scale_dispersion: 0.5,
            ambient_noise: 0.05,
            offset: 4.0,
            seed,
            ..Self::uniform(10, 64, vec![1.3, 1.7, 2.1, 2.5], n_train, n_query)
        }
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return bad(format!(
                "class count {} outside 2..={MAX_CLASSES}",
                self.num_classes
            ));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("every layer needs a positive width".into());
        }
        if self.n_train == 0 || self.n_query == 0 {
            return bad("n_train and n_query must be positive".into());
        }
        if self.n_train + self.n_query > u32::MAX as usize {
            return bad("too many samples for 32-bit ids".into());
        }
        if self.separation.len() != self.dims.len() {
            return bad(format!(
                "separation schedule has {} entries for {} layers",
                self.separation.len(),
                self.dims.len()
            ));
        }
        if self
            .separation
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return bad("separations must be finite and non-negative".into());
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return bad("noise_scale must be positive".into());
        }
        if !(self.scale_dispersion.is_finite() && self.scale_dispersion >= 0.0) {
            return bad("scale_dispersion must be finite and non-negative".into());
        }
        if self.anchor_span == Some(0) {
            return bad("anchor_span must be positive".into());
        }
        if !(self.ambient_noise.is_finite() && self.ambient_noise >= 0.0) {
            return bad("ambient_noise must be finite and non-negative".into());
        }
        if !self.offset.is_finite() {
            return bad("offset must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.layer_correlation) {
            return bad("layer_correlation must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]".into());
        }
        for s in &self.swaps {
            if s.layer >= self.dims.len()
                || usize::from(s.class_a) >= self.num_classes
                || usize::from(s.class_b) >= self.num_classes
                || s.class_a == s.class_b
            {
                return bad(format!("invalid anchor swap {s:?}"));
            }
        }
        Ok(())
    }

    fn span(&self, dim: usize) -> usize {
        self.anchor_span.unwrap_or(self.num_classes).min(dim)
    }

    fn anchor(&self, class: usize, dim: usize) -> Vec<f64> {
        let span = self.span(dim);
        let mut a = vec![0.0; dim];
        if span >= self.num_classes {
            a[class] = 1.0;
        } else {
            // smallest base whose `span` digits can enumerate every class
            let mut base = 2usize;
            while base
                .checked_pow(span as u32)
                .is_none_or(|cap| cap < self.num_classes)
            {
                base += 1;
            }
            let mut rest = class;
            for slot in &mut a[..span] {
                *slot = (rest % base) as f64;
                rest /= base;
            }
        }
        a
    }

    /// Anchor used by a query of `class` at `layer`, accounting for swaps.
    fn query_anchor(&self, anchors: &[Vec<Vec<f64>>], class: usize, layer: usize) -> Vec<f64> {
        let own = &anchors[layer][class];
        for s in &self.swaps {
            let other = if usize::from(s.class_a) == class {
                usize::from(s.class_b)
            } else if usize::from(s.class_b) == class {
                usize::from(s.class_a)
            } else {
                continue;
            };
            let target = &anchors[layer][other];
            return match layer.cmp(&s.layer) {
                std::cmp::Ordering::Less => own.clone(),
                std::cmp::Ordering::Equal => own
                    .iter()
                    .zip(target)
                    .map(|(o, t)| o + SWAP_BLEND * (t - o))
                    .collect(),
                std::cmp::Ordering::Greater => target.clone(),
            };
        }
        own.clone()
    }
}

/// Training repository and query set drawn from `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let num_layers = spec.num_layers();
    let max_dim = spec.dims.iter().copied().max().unwrap_or(1);
    let anchors: Vec<Vec<Vec<f64>>> = (0..num_layers)
        .map(|l| {
            (0..spec.num_classes)
                .map(|c| {
                    spec.anchor(c, spec.dims[l])
                        .into_iter()
                        .map(|v| v * spec.separation[l] + spec.offset)
                        .collect()
                })
                .collect()
        })
        .collect();
    let spans: Vec<usize> = spec.dims.iter().map(|&d| spec.span(d)).collect();
    let rho = spec.layer_correlation;
    let fresh = (1.0 - rho * rho).sqrt();

    let draw = |rng: &mut ChaCha8Rng, centre_of: &dyn Fn(usize) -> Vec<f64>| -> Vec<Vec<f32>> {
        let z: f64 = rng.sample(StandardNormal);
        let difficulty = (spec.scale_dispersion * z).exp();
        let shared: Vec<f64> = (0..max_dim).map(|_| rng.sample(StandardNormal)).collect();
        (0..num_layers)
            .map(|l| {
                centre_of(l)
                    .iter()
                    .zip(&shared)
                    .enumerate()
                    .map(|(i, (&c, &e))| {
                        let f: f64 = rng.sample(StandardNormal);
                        let scale = if i < spans[l] {
                            spec.noise_scale
                        } else {
                            spec.ambient_noise
                        };
                        (c + difficulty * scale * (rho * e + fresh * f)) as f32
                    })
                    .collect()
            })
            .collect()
    };

    let mut train = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        let class = i % spec.num_classes;
        let activations = draw(&mut rng, &|l| anchors[l][class].clone());
        let mut label = class;
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            let shift = rng.random_range(1..spec.num_classes);
            label = (class + shift) % spec.num_classes;
        }
        train.push(ActivationTrace::training(
            i as SampleId,
            activations,
            label as ClassId,
        ));
    }

    let last = num_layers - 1;
    let two_var = 2.0 * spec.noise_scale * spec.noise_scale;
    let mut queries = Vec::with_capacity(spec.n_query);
    for j in 0..spec.n_query {
        let class = rng.random_range(0..spec.num_classes);
        let activations = draw(&mut rng, &|l| spec.query_anchor(&anchors, class, l));
        let x = &activations[last];
        let sq: Vec<f64> = anchors[last]
            .iter()
            .map(|a| {
                a.iter()
                    .zip(x)
                    .map(|(&a, &v)| (f64::from(v) - a).powi(2))
                    .sum()
            })
            .collect();
        let (predicted, best) = sq
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, 0.0));
        let denom: f64 = sq.iter().map(|&d| (-(d - best) / two_var).exp()).sum();
        let confidence = (1.0 / denom) as f32;
        queries.push(ActivationTrace::query(
            (spec.n_train + j) as SampleId,
            activations,
            class as ClassId,
            predicted as ClassId,
            confidence.clamp(0.0, 1.0),
        ));
    }

    let repo = Dataset::new(
        DatasetHeader::new(
            DatasetKind::Repository,
            spec.n_train,
            spec.num_classes,
            &spec.dims,
        ),
        train,
    )?;
    let qs = Dataset::new(
        DatasetHeader::new(
            DatasetKind::Queryset,
            spec.n_query,
            spec.num_classes,
            &spec.dims,
        ),
        queries,
    )?;
    Ok((repo, qs))
}

/// Fraction of queries whose simulated prediction is wrong.
pub fn error_rate(queries: &Dataset) -> f64 {
    let wrong = queries
        .traces
        .iter()
        .filter(|t| t.is_correct() == Some(false))
        .count();
    wrong as f64 / queries.len().max(1) as f64
}
