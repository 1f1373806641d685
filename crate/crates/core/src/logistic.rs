//! Logistic-regression combiners mapping uncertainty features to a
//! probability that the classifier's prediction is correct.
//!
//! Columns are standardized with training statistics, then the
//! L2-regularized mean negative log-likelihood is minimized by full-batch
//! gradient descent with Armijo backtracking from a zero start. No randomness
//! is involved, so identical inputs give bit-identical models.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::UqFeatureVector;

/// Which feature families feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSubsetSpec {
    pub use_sm: bool,
    pub use_dc: bool,
    pub use_lu: bool,
}

impl FeatureSubsetSpec {
    pub const SM: Self = Self::new(true, false, false);
    pub const DC: Self = Self::new(false, true, false);
    pub const LU: Self = Self::new(false, false, true);
    pub const DC_LU: Self = Self::new(false, true, true);
    pub const SM_DC_LU: Self = Self::new(true, true, true);

    /// The five combinations compared in the evaluation table.
    pub const STANDARD: [Self; 5] = [Self::SM, Self::DC, Self::LU, Self::DC_LU, Self::SM_DC_LU];

    pub const fn new(use_sm: bool, use_dc: bool, use_lu: bool) -> Self {
        Self {
            use_sm,
            use_dc,
            use_lu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_sm || self.use_dc || self.use_lu) {
            return Err(Error::InvalidConfig(
                "feature subset selects no columns".into(),
            ));
        }
        Ok(())
    }

    /// Column count for a network with `num_layers` emitted layers.
    pub fn num_columns(&self, num_layers: usize) -> usize {
        usize::from(self.use_sm)
            + if self.use_dc {
                num_layers.saturating_sub(1)
            } else {
                0
            }
            + if self.use_lu { num_layers } else { 0 }
    }

    /// Column names in matrix order: `sm`, `dc_1..dc_{L-1}`, `lu_0..lu_{L-1}`.
    pub fn column_names(&self, num_layers: usize) -> Vec<String> {
        let mut names = Vec::new();
        if self.use_sm {
            names.push("sm".to_string());
        }
        if self.use_dc {
            names.extend((1..num_layers).map(|t| format!("dc_{t}")));
        }
        if self.use_lu {
            names.extend((0..num_layers).map(|l| format!("lu_{l}")));
        }
        names
    }

    /// Builds the design matrix for this subset, one row per feature vector.
    pub fn design_matrix(&self, features: &[UqFeatureVector]) -> Array2<f64> {
        let num_layers = features.first().map_or(0, |f| f.lu.len());
        let cols = self.num_columns(num_layers);
        let mut x = Array2::zeros((features.len(), cols));
        for (mut row, f) in x.rows_mut().into_iter().zip(features) {
            let mut values = Vec::with_capacity(cols);
            if self.use_sm {
                values.push(f.softmax_confidence);
            }
            if self.use_dc {
                values.extend(f.dc.iter().map(|&d| f64::from(d)));
            }
            if self.use_lu {
                values.extend_from_slice(&f.lu);
            }
            row.assign(&ArrayView1::from(&values[..]));
        }
        x
    }
}

impl fmt::Display for FeatureSubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.use_sm {
            parts.push("SM");
        }
        if self.use_dc {
            parts.push("DC");
        }
        if self.use_lu {
            parts.push("LU");
        }
        f.write_str(&parts.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub l2: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iters: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// Backtracking could not find a decreasing step (numerical floor reached).
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub final_objective: f64,
    /// Mean negative log-likelihood without the penalty.
    pub final_data_loss: f64,
    pub gradient_inf_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub subset: FeatureSubsetSpec,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Zero-variance columns whose weight is pinned at 0.
    pub frozen: Vec<bool>,
    pub options: FitOptions,
    pub convergence: ConvergenceRecord,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// L2-regularized mean logistic loss over a standardized design matrix.
/// Parameters are laid out as `[w_0 .. w_{d-1}, bias]`; the bias is not penalized.
pub struct LogisticObjective<'a> {
    x: ArrayView2<'a, f64>,
    y: Array1<f64>,
    l2: f64,
    active: Vec<bool>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: ArrayView2<'a, f64>, targets: &[bool], l2: f64) -> Self {
        let active = vec![true; x.ncols()];
        Self::with_active(x, targets, l2, active)
    }

    fn with_active(x: ArrayView2<'a, f64>, targets: &[bool], l2: f64, active: Vec<bool>) -> Self {
        Self {
            x,
            y: targets.iter().map(|&t| f64::from(u8::from(t))).collect(),
            l2,
            active,
        }
    }

    pub fn num_params(&self) -> usize {
        self.x.ncols() + 1
    }

    fn margins(&self, params: &[f64]) -> Array1<f64> {
        let d = self.x.ncols();
        let w = ArrayView1::from(&params[..d]);
        self.x.dot(&w) + params[d]
    }

    pub fn data_loss(&self, params: &[f64]) -> f64 {
        let z = self.margins(params);
        let n = self.y.len() as f64;
        z.iter()
            .zip(&self.y)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let d = self.x.ncols();
        let penalty: f64 = params[..d].iter().map(|w| w * w).sum::<f64>() * 0.5 * self.l2;
        self.data_loss(params) + penalty
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.x.ncols();
        let n = self.y.len() as f64;
        let z = self.margins(params);
        let residual: Array1<f64> = z
            .iter()
            .zip(&self.y)
            .map(|(&z, &y)| sigmoid(z) - y)
            .collect();
        let gw = self.x.t().dot(&residual) / n;
        let mut g: Vec<f64> = gw
            .iter()
            .zip(&params[..d])
            .zip(&self.active)
            .map(|((&g, &w), &a)| if a { g + self.l2 * w } else { 0.0 })
            .collect();
        g.push(residual.sum() / n);
        g
    }
}

/// Per-column mean and population standard deviation; zero-variance columns get std 1.
fn column_stats(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    let mut frozen = Vec::with_capacity(x.ncols());
    for col in x.axis_iter(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let constant = std.is_nan() || std <= 0.0 || col.iter().all(|&v| v == col[0]);
        means.push(mean);
        stds.push(if constant { 1.0 } else { std });
        frozen.push(constant);
    }
    (means, stds, frozen)
}

fn standardize(x: ArrayView2<'_, f64>, means: &[f64], stds: &[f64]) -> Array2<f64> {
    let mut z = x.to_owned();
    for (mut col, (&m, &s)) in z.axis_iter_mut(Axis(1)).zip(means.iter().zip(stds)) {
        col.mapv_inplace(|v| (v - m) / s);
    }
    z
}

fn check_features(x: ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::EmptyFeatures);
    }
    for ((row, column), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row, column });
        }
    }
    Ok(())
}

/// Fits a model, returning it with the objective value after every accepted step
/// (the first entry is the objective at the zero start).
pub fn fit_with_trace(
    features: ArrayView2<'_, f64>,
    targets: &[bool],
    subset: FeatureSubsetSpec,
    options: FitOptions,
) -> Result<(LogisticModel, Vec<f64>)> {
    subset.validate()?;
    check_features(features)?;
    if targets.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            sample_id: None,
            layer: None,
            expected: features.nrows(),
            found: targets.len(),
        });
    }
    if targets.iter().all(|&t| t) || targets.iter().all(|&t| !t) {
        return Err(Error::SingleClassTarget);
    }
    if !(options.l2.is_finite() && options.l2 >= 0.0)
        || !(options.tolerance.is_finite() && options.tolerance > 0.0)
    {
        return Err(Error::InvalidConfig(format!(
            "invalid fit options {options:?}"
        )));
    }

    let (means, stds, frozen) = column_stats(features);
    let z = standardize(features, &means, &stds);
    let active: Vec<bool> = frozen.iter().map(|f| !f).collect();
    let objective = LogisticObjective::with_active(z.view(), targets, options.l2, active);

    const ARMIJO: f64 = 1e-4;
    let mut params = vec![0.0; objective.num_params()];
    let mut value = objective.value(&params);
    let mut grad = objective.gradient(&params);
    let mut history = vec![value];
    let mut step = 1.0;
    let mut iterations = 0;
    let reason = loop {
        let gnorm_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm_inf < options.tolerance {
            break StopReason::GradientTolerance;
        }
        if iterations >= options.max_iters {
            break StopReason::MaxIterations;
        }
        let gnorm_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = None;
        while step > 1e-20 {
            let candidate: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - step * g)
                .collect();
            let cv = objective.value(&candidate);
            if cv <= value - ARMIJO * step * gnorm_sq {
                accepted = Some((candidate, cv));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            break StopReason::StepUnderflow;
        };
        params = next;
        value = next_value;
        grad = objective.gradient(&params);
        history.push(value);
        iterations += 1;
        step = (step * 2.0).min(1e6);
    };

    let d = features.ncols();
    let gradient_inf_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let model = LogisticModel {
        subset,
        means,
        stds,
        weights: params[..d].to_vec(),
        bias: params[d],
        frozen,
        options,
        convergence: ConvergenceRecord {
            iterations,
            converged: reason == StopReason::GradientTolerance,
            reason,
            final_objective: value,
            final_data_loss: objective.data_loss(&params),
            gradient_inf_norm,
        },
    };
    Ok((model, history))
}

pub fn fit(
    features: ArrayView2<'_, f64>,
    targets: &[bool],
    subset: FeatureSubsetSpec,
    options: FitOptions,
) -> Result<LogisticModel> {
    fit_with_trace(features, targets, subset, options).map(|(m, _)| m)
}

impl LogisticModel {
    pub fn num_columns(&self) -> usize {
        self.weights.len()
    }

    /// `sigmoid(standardized · weights + bias)` per row.
    pub fn predict_scores(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                sample_id: None,
                layer: None,
                expected: self.weights.len(),
                found: features.ncols(),
            });
        }
        Ok(features
            .rows()
            .into_iter()
            .map(|row| {
                let z = row
                    .iter()
                    .zip(&self.means)
                    .zip(&self.stds)
                    .zip(&self.weights)
                    .map(|(((&v, &m), &s), &w)| (v - m) / s * w)
                    .sum::<f64>()
                    + self.bias;
                sigmoid(z)
            })
            .collect())
    }
}

/// Mean binary cross-entropy of probability scores against targets.
pub fn log_loss(scores: &[f64], targets: &[bool]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(targets)
        .map(|(&p, &t)| if t { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;

    fn untrained(d: usize) -> LogisticModel {
        LogisticModel {
            subset: FeatureSubsetSpec::LU,
            means: vec![0.0; d],
            stds: vec![1.0; d],
            weights: vec![0.0; d],
            bias: 0.0,
            frozen: vec![false; d],
            options: FitOptions::default(),
            convergence: ConvergenceRecord {
                iterations: 0,
                converged: false,
                reason: StopReason::MaxIterations,
                final_objective: 0.0,
                final_data_loss: 0.0,
                gradient_inf_norm: 0.0,
            },
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = untrained(3);
        let x = array![[1.0, -4.0, 9.0], [0.0, 0.0, 0.0]];
        assert_eq!(m.predict_scores(x.view()).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            m.predict_scores(array![[1.0]].view()),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn separable_1d() {
        let xs: Vec<f64> = (-10..=10)
            .filter(|&i| i != 0)
            .map(|i| i as f64 / 4.0)
            .collect();
        let x = Array2::from_shape_vec((xs.len(), 1), xs.clone()).unwrap();
        let y: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        let m = fit(
            x.view(),
            &y,
            FeatureSubsetSpec::LU,
            FitOptions {
                l2: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.weights[0] > 0.0);
        let s = m.predict_scores(x.view()).unwrap();
        assert!(s.iter().zip(&y).all(|(&p, &t)| (p > 0.5) == t));
    }

    #[test]
    fn monotone_single_feature() {
        let x = array![[0.1], [0.9], [0.4], [0.7], [0.2], [0.6]];
        let y = [false, true, false, true, true, false];
        let m = fit(x.view(), &y, FeatureSubsetSpec::SM, FitOptions::default()).unwrap();
        let s = m.predict_scores(x.view()).unwrap();
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&a, &b| x[[a, 0]].total_cmp(&x[[b, 0]]));
        assert!(idx.windows(2).all(|w| s[w[0]] < s[w[1]]));
    }

    #[test]
    fn constant_column_is_frozen() {
        let x = array![[1.0, 0.2], [1.0, 0.8], [1.0, 0.3], [1.0, 0.9]];
        let y = [false, true, false, true];
        let m = fit(
            x.view(),
            &y,
            FeatureSubsetSpec::DC_LU,
            FitOptions::default(),
        )
        .unwrap();
        assert_eq!(m.frozen, vec![true, false]);
        assert_eq!(m.weights[0], 0.0);
        assert_eq!(m.stds[0], 1.0);
    }

    #[test]
    fn fit_errors() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            fit(
                x.view(),
                &[true, true],
                FeatureSubsetSpec::SM,
                FitOptions::default()
            ),
            Err(Error::SingleClassTarget)
        ));
        assert!(matches!(
            fit(
                array![[1.0]].view(),
                &[true],
                FeatureSubsetSpec::SM,
                FitOptions::default()
            ),
            Err(Error::EmptyFeatures)
        ));
        assert!(matches!(
            fit(
                array![[1.0], [f64::NAN]].view(),
                &[true, false],
                FeatureSubsetSpec::SM,
                FitOptions::default()
            ),
            Err(Error::NonFiniteFeature { row: 1, column: 0 })
        ));
        assert!(fit(
            x.view(),
            &[true, false],
            FeatureSubsetSpec::new(false, false, false),
            FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn subset_columns() {
        assert_eq!(FeatureSubsetSpec::DC_LU.num_columns(4), 3 + 4);
        assert_eq!(
            FeatureSubsetSpec::SM_DC_LU.column_names(3),
            vec!["sm", "dc_1", "dc_2", "lu_0", "lu_1", "lu_2"]
        );
        assert_eq!(FeatureSubsetSpec::SM_DC_LU.to_string(), "SM+DC+LU");
        let f = UqFeatureVector {
            query_id: 0,
            softmax_confidence: 0.7,
            dc: vec![1, 0],
            lu: vec![0.1, 0.2, 0.3],
            correct: true,
        };
        let x = FeatureSubsetSpec::SM_DC_LU.design_matrix(&[f]);
        assert_eq!(x.row(0).to_vec(), vec![0.7, 1.0, 0.0, 0.1, 0.2, 0.3]);
    }
}
