use std::path::PathBuf;

use anyhow::{Context, Result};
use glod_core::hierarchy::{build_hierarchy, build_hierarchy_with_skybox};
use glod_core::hspt::{build_hspt, default_size_threshold};
use glod_core::store::read_ply;
use glod_core::train::{initial_model, TrainConfig};
use glod_core::{GaussianAttributes, LodConfig, LodMetric, MemoryReport, SceneStore};

use super::is_ply;

#[derive(Clone, Debug, Default)]
pub struct BuildArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub lod_threshold: Option<f64>,
    pub metric: Option<LodMetric>,
    pub size_threshold: Option<f64>,
    pub min_subtree: Option<usize>,
    pub sh_degree: Option<u8>,
}

/// Builds a scene file from a point cloud or rebuilds one from another
/// scene's leaves. Unset parameters come from the input scene, or the
/// defaults for a point cloud.
pub fn build(a: &BuildArgs) -> Result<MemoryReport> {
    let defaults = TrainConfig::default();
    let (scene, sky, lod, size, min_subtree) = if is_ply(&a.input)? {
        let points = read_ply(&a.input)?;
        let cfg = TrainConfig {
            skybox_points: 0,
            sh_degree: a.sh_degree.unwrap_or(defaults.sh_degree),
            ..defaults.clone()
        };
        let model = initial_model(&points, &cfg)?;
        (model.scene, Vec::new(), LodConfig::default(), None, defaults.min_subtree)
    } else {
        let store = SceneStore::open(&a.input).with_context(|| format!("opening scene {}", a.input.display()))?;
        let h = store.read_hierarchy()?;
        let hspt = store.read_hspt(&h)?;
        let mut leaves = h.leaves();
        leaves.sort_unstable();
        let degree = a.sh_degree.unwrap_or(store.sh_degree());
        let take = |sky: bool| -> Vec<GaussianAttributes> {
            leaves
                .iter()
                .filter(|&&n| h.in_skybox(n) == sky)
                .map(|&n| h.node(n).clone().with_sh_degree(degree))
                .collect()
        };
        (take(false), take(true), hspt.lod, Some(hspt.size_threshold), hspt.min_subtree)
    };
    let lod = LodConfig::new(a.lod_threshold.unwrap_or(lod.threshold), a.metric.unwrap_or(lod.metric));
    lod.validate()?;
    let h = if sky.is_empty() {
        build_hierarchy(scene)?
    } else {
        build_hierarchy_with_skybox(scene, sky)?
    };
    let size = a.size_threshold.or(size).unwrap_or_else(|| default_size_threshold(&h));
    let hspt = build_hspt(&h, size, a.min_subtree.unwrap_or(min_subtree), &lod)?;
    SceneStore::write(&a.output, &h, &hspt).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(SceneStore::open(&a.output)?.memory_report())
}
