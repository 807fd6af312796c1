//! Minimum viewing distances for level-of-detail cuts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size measure used to derive the minimum viewing distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LodMetric {
    /// Largest of the three scales.
    #[default]
    MaxScale,
    /// Square root of `s1 s2 + s1 s3 + s2 s3`, proportional to the square
    /// root of the ellipsoid surface area. Better for elongated Gaussians.
    SurfaceArea,
}

impl LodMetric {
    pub fn to_u32(self) -> u32 {
        match self {
            LodMetric::MaxScale => 0,
            LodMetric::SurfaceArea => 1,
        }
    }

    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            0 => Some(LodMetric::MaxScale),
            1 => Some(LodMetric::SurfaceArea),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LodConfig {
    /// Global LoD threshold: viewing distance per unit of Gaussian size.
    pub threshold: f64,
    #[serde(default)]
    pub metric: LodMetric,
}

impl Default for LodConfig {
    fn default() -> Self {
        Self {
            threshold: 100.0,
            metric: LodMetric::MaxScale,
        }
    }
}

impl LodConfig {
    pub fn new(threshold: f64, metric: LodMetric) -> Self {
        Self { threshold, metric }
    }

    pub fn with_metric(self, metric: LodMetric) -> Self {
        Self { metric, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("LoD threshold must be positive, got {}", self.threshold)))
        }
    }

    /// Size measure of a Gaussian under this metric.
    #[inline]
    pub fn size_of(&self, scale: &[f32; 3]) -> f64 {
        let [a, b, c] = scale.map(|s| s as f64);
        match self.metric {
            LodMetric::MaxScale => a.max(b).max(c),
            LodMetric::SurfaceArea => (a * b + a * c + b * c).sqrt(),
        }
    }

    /// Unchecked minimum distance for hot loops; see [`min_distance`].
    #[inline]
    pub fn min_distance(&self, scale: &[f32; 3]) -> f64 {
        self.threshold * self.size_of(scale)
    }
}

/// Closest camera distance at which a Gaussian with these scales may be
/// rendered: `T · size`, where size is the largest scale or the
/// surface-area measure depending on `cfg.metric`.
pub fn min_distance(scale: &[f32; 3], cfg: &LodConfig) -> Result<f64> {
    cfg.validate()?;
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("scales must be positive, got {scale:?}")));
    }
    Ok(cfg.min_distance(scale))
}
