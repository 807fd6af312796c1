use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;
use crate::error::{Error, Result};
use crate::hierarchy::SplitConfig;
use crate::lod::LodConfig;
use crate::scheduler::SchedulerConfig;

/// Per-attribute learning rates. `means` is multiplied by the scene extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub means: f64,
    pub scales: f64,
    pub rotations: f64,
    pub opacity: f64,
    pub colors: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            scales: 5e-3,
            rotations: 1e-3,
            opacity: 5e-2,
            colors: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Flat optimization steps before the hierarchy is built.
    pub init_iterations: u64,
    pub total_iterations: u64,
    pub densify_interval: u64,
    /// No densification after this iteration; `None` densifies throughout.
    pub densify_until: Option<u64>,
    pub dead_opacity_threshold: f32,
    /// `None` spawns 0.5% of the current leaf count per densify.
    pub spawns_per_densify: Option<usize>,
    pub loss_lambda: f64,
    pub adam: AdamConfig,
    pub lod: LodConfig,
    pub cache: CacheConfig,
    pub use_cache: bool,
    pub scheduler: SchedulerConfig,
    /// Uniform view sampling when false.
    pub use_scheduler: bool,
    pub skybox_points: usize,
    pub sh_degree: u8,
    /// HSPT volume threshold; `None` uses the default for the built tree.
    pub size_threshold: Option<f64>,
    pub min_subtree: usize,
    pub cull: bool,
    pub split: SplitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_iterations: 2000,
            total_iterations: 10_000,
            densify_interval: 500,
            densify_until: None,
            dead_opacity_threshold: 0.005,
            spawns_per_densify: None,
            loss_lambda: 0.2,
            adam: AdamConfig::default(),
            lod: LodConfig::default(),
            cache: CacheConfig::default(),
            use_cache: true,
            scheduler: SchedulerConfig::default(),
            use_scheduler: true,
            skybox_points: 1000,
            sh_degree: 1,
            size_threshold: None,
            min_subtree: 32,
            cull: true,
            split: SplitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.adam.lr;
        let rates = [lr.means, lr.scales, lr.rotations, lr.opacity, lr.colors, lr.sh_rest];
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("learning rates must be positive, got {lr:?}")));
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidParameter("densify_interval must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_lambda) {
            return Err(Error::InvalidParameter(format!(
                "loss_lambda must lie in [0, 1], got {}",
                self.loss_lambda
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidParameter("Adam needs 0 <= beta < 1 and eps > 0".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::InvalidParameter(format!("SH degree {} is not supported", self.sh_degree)));
        }
        if self.min_subtree == 0 {
            return Err(Error::InvalidParameter("min_subtree must be at least 1".into()));
        }
        if let Some(t) = self.size_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("size threshold must be positive, got {t}")));
            }
        }
        self.lod.validate()?;
        self.cache.validate()
    }

    /// Spawn count for a tree with `leaves` scene leaves.
    pub fn spawns_for(&self, leaves: usize) -> usize {
        self.spawns_per_densify.unwrap_or(leaves / 200)
    }

    pub fn densifies_at(&self, iteration: u64) -> bool {
        iteration > 0 && iteration.is_multiple_of(self.densify_interval) && self.densify_until.is_none_or(|u| iteration <= u)
    }
}
