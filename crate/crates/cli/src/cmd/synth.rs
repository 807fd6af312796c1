use std::path::PathBuf;

use anyhow::{Context, Result};
use glod_core::hierarchy::build_hierarchy_with_skybox;
use glod_core::hspt::{build_hspt, default_size_threshold};
use glod_core::store::write_ply;
use glod_core::synthetic::{looping_path, orbit_views, point_cloud, procedural_scene};
use glod_core::train::Dataset;
use glod_core::{LodConfig, SceneStore};

use super::write_json;

#[derive(Clone, Debug)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub gaussians: usize,
    pub views: usize,
    pub resolution: u32,
    pub stride: usize,
    pub noise: f32,
}

/// Procedural ground truth for trying the other commands: `truth.glod`,
/// a sparse `points.ply` sampled from it, posed renders in `views/` and an
/// orbit in `path.json`.
pub fn synth(a: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let scene = procedural_scene(a.seed, a.gaussians);
    let h = build_hierarchy_with_skybox(scene.gaussians.clone(), scene.sky.clone())?;
    let hspt = build_hspt(&h, default_size_threshold(&h), 32, &LodConfig::default())?;
    SceneStore::write(a.out.join("truth.glod"), &h, &hspt)?;
    write_ply(a.out.join("points.ply"), &point_cloud(&scene.gaussians, a.stride.max(1), a.noise, a.seed))?;
    let res = [a.resolution, a.resolution];
    let views = Dataset::render_from(&scene.all(), orbit_views(scene.center, 3.0 * scene.radius, a.views, res, a.seed))?;
    views.save_dir(a.out.join("views"), false)?;
    write_json(
        &a.out.join("path.json"),
        &looping_path(scene.center, 2.0 * scene.radius, 0.5 * scene.radius, 32, res),
    )?;
    Ok(())
}
