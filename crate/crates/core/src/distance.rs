//! Distance kernels over `f32` activation vectors with `f64` accumulation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DistanceKind {
    #[default]
    #[serde(rename = "braycurtis", alias = "bray_curtis", alias = "BrayCurtis")]
    BrayCurtis,
    #[serde(rename = "euclidean", alias = "Euclidean")]
    Euclidean,
    #[serde(rename = "cosine", alias = "Cosine")]
    Cosine,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [
        DistanceKind::BrayCurtis,
        DistanceKind::Euclidean,
        DistanceKind::Cosine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::BrayCurtis => "braycurtis",
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Cosine => "cosine",
        }
    }

    /// Checked evaluation.
    pub fn distance(self, u: &[f32], v: &[f32]) -> Result<f64> {
        check_dims(u, v)?;
        Ok(self.eval(u, v))
    }

    /// Evaluation without the length check; callers guarantee `u.len() == v.len()`.
    #[inline]
    pub(crate) fn eval(self, u: &[f32], v: &[f32]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        match self {
            DistanceKind::BrayCurtis => bray_curtis_unchecked(u, v),
            DistanceKind::Euclidean => euclidean_unchecked(u, v),
            DistanceKind::Cosine => cosine_unchecked(u, v),
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "braycurtis" | "bray_curtis" | "bray-curtis" => Ok(DistanceKind::BrayCurtis),
            "euclidean" => Ok(DistanceKind::Euclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance {other:?} (expected braycurtis, euclidean or cosine)"
            ))),
        }
    }
}

fn check_dims(u: &[f32], v: &[f32]) -> Result<()> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::DimensionMismatch {
            sample_id: None,
            layer: None,
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Bray–Curtis dissimilarity `Σ|u−v| / Σ|u+v|`; two all-zero vectors are at distance 0.
pub fn bray_curtis(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(bray_curtis_unchecked(u, v))
}

pub fn euclidean(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(euclidean_unchecked(u, v))
}

/// `1 − cos(u, v)`, or 1 when either vector has zero norm.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(cosine_unchecked(u, v))
}

#[inline]
fn bray_curtis_unchecked(u: &[f32], v: &[f32]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        num += (a - b).abs();
        den += (a + b).abs();
    }
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[inline]
fn euclidean_unchecked(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn cosine_unchecked(u: &[f32], v: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    // sqrt(x·x) == x exactly, so u == v yields exactly 0.
    (1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0)
}

/// Whether a vector has zero Euclidean norm (cosine falls back to 1 there).
pub fn is_zero_norm(u: &[f32]) -> bool {
    u.iter().all(|&x| x == 0.0)
}
