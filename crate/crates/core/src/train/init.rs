//! Model initialization from a sparse point cloud.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;
use crate::hierarchy::{build_hierarchy_with_skybox, Hierarchy};
use crate::hspt::{build_hspt, default_size_threshold, Hspt};
use crate::render::{loss_f64, RenderOptions, RenderPass};
use crate::store::PlyPoint;
use crate::synthetic::fibonacci_sphere;

use super::adam::{OptimizerState, StepSizes};
use super::config::TrainConfig;
use super::dataset::Dataset;

const INIT_OPACITY: f32 = 0.1;
const GRAY: [f32; 3] = [0.5; 3];

/// Unoptimized Gaussians derived from a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialModel {
    pub scene: Vec<GaussianAttributes>,
    pub skybox: Vec<GaussianAttributes>,
    pub center: [f64; 3],
    /// Largest point distance from the centroid; 1 for a single point.
    pub extent: f64,
}

impl InitialModel {
    /// Scene then skybox, the leaf order of the built hierarchy.
    pub fn all(&self) -> Vec<GaussianAttributes> {
        self.scene.iter().chain(&self.skybox).cloned().collect()
    }
}

#[derive(Clone, Debug)]
pub struct Initialized {
    pub hierarchy: Hierarchy,
    pub hspt: Hspt,
    /// Moments of the flat phase, carried over to the leaves.
    pub optimizer: OptimizerState,
    pub extent: f64,
}

/// Mean distance from each point to its three nearest other points.
fn mean_knn_distance(points: &[[f64; 3]]) -> Vec<f64> {
    if points.len() < 2 {
        return vec![0.0; points.len()];
    }
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(points);
    let want = (points.len() - 1).min(3);
    let qty = NonZero::new(want + 1).unwrap();
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.nearest_n::<SquaredEuclidean>(p, qty);
            let mut others: Vec<f64> = nn.iter().filter(|n| n.item != i as u64).map(|n| n.distance.sqrt()).collect();
            others.truncate(want);
            others.iter().sum::<f64>() / others.len() as f64
        })
        .collect()
}

/// One Gaussian per point plus a skybox shell at ten times the extent.
pub fn initial_model(points: &[PlyPoint], cfg: &TrainConfig) -> Result<InitialModel> {
    if points.is_empty() {
        return Err(Error::EmptyScene);
    }
    let pos: Vec<[f64; 3]> = points.iter().map(|p| p.position.map(f64::from)).collect();
    if pos.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("point cloud has non-finite coordinates".into()));
    }
    let c = pos.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / pos.len() as f64;
    let radius = pos.iter().map(|p| (Vector3::from(*p) - c).norm()).fold(0.0, f64::max);
    let extent = if radius > 0.0 { radius } else { 1.0 };
    let fallback = 0.01 * extent;
    let knn = mean_knn_distance(&pos);
    let scene = points
        .iter()
        .zip(&knn)
        .map(|(p, &d)| {
            let s = if d > 0.0 && d.is_finite() { d } else { fallback };
            GaussianAttributes::isotropic(p.position, s as f32, INIT_OPACITY, p.color.unwrap_or(GRAY)).with_sh_degree(cfg.sh_degree)
        })
        .collect();
    let r = 10.0 * extent;
    let m = cfg.skybox_points;
    let sky_scale = if m > 0 {
        (r * (4.0 * std::f64::consts::PI / m as f64).sqrt() * 0.6) as f32
    } else {
        0.0
    };
    let skybox = fibonacci_sphere(m)
        .into_iter()
        .map(|d| {
            let p = c + d * r;
            GaussianAttributes::isotropic([p.x as f32, p.y as f32, p.z as f32], sky_scale, INIT_OPACITY, GRAY).with_sh_degree(cfg.sh_degree)
        })
        .collect();
    Ok(InitialModel {
        scene,
        skybox,
        center: c.into(),
        extent,
    })
}

/// Mean PSNR of rendering `gs` against every view.
pub fn mean_psnr(gs: &[GaussianAttributes], views: &Dataset) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidDataset("no views to evaluate".into()));
    }
    let mut sum = 0.0;
    for (cam, target) in views.cameras.iter().zip(&views.images) {
        let img = RenderPass::new(gs, cam, &RenderOptions::default())?.image();
        sum += img.psnr(target);
    }
    Ok(sum / views.len() as f64)
}

/// Optimizes every Gaussian of `gs` jointly for `iterations` uniformly
/// sampled views, without densification.
pub fn optimize_flat(
    gs: &mut [GaussianAttributes],
    opt: &mut OptimizerState,
    views: &Dataset,
    cfg: &TrainConfig,
    extent: f64,
    iterations: u64,
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    if views.is_empty() {
        return Err(Error::InvalidDataset("initialization needs at least one view".into()));
    }
    let lr = StepSizes::new(&cfg.adam, extent, opt.width() - 14);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417);
    for it in 1..=iterations {
        let v = rng.random_range(0..views.len());
        let cam = &views.cameras[v];
        let pass = RenderPass::new(gs, cam, &RenderOptions::default())?;
        let target = views.images[v].to_f64();
        let lv = loss_f64(pass.pixels(), &target, cam.width(), cam.height(), cfg.loss_lambda)?;
        if !lv.value.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: format!("initialization loss {} on view {v}", lv.value),
            });
        }
        let grads = pass.backward(&lv.grad)?;
        for (k, g) in gs.iter_mut().enumerate() {
            opt.step(k as u32, g, &grads, k, &cfg.adam, &lr);
        }
    }
    Ok(())
}

/// Builds the initial model, optimizes it flat and wraps it in a hierarchy
/// and HSPT.
pub fn initialize(points: &[PlyPoint], views: &Dataset, cfg: &TrainConfig) -> Result<Initialized> {
    cfg.validate()?;
    let model = initial_model(points, cfg)?;
    let n_scene = model.scene.len();
    let mut gs = model.all();
    let mut opt = OptimizerState::new(gs.len(), cfg.sh_degree);
    optimize_flat(&mut gs, &mut opt, views, cfg, model.extent, cfg.init_iterations)?;
    let sky = gs.split_off(n_scene);
    // Leaves keep their indices, so the flat moments carry over.
    let hierarchy = build_hierarchy_with_skybox(gs, sky)?;
    opt.resize(hierarchy.len());
    let threshold = cfg.size_threshold.unwrap_or_else(|| default_size_threshold(&hierarchy));
    let hspt = build_hspt(&hierarchy, threshold, cfg.min_subtree, &cfg.lod)?;
    Ok(Initialized {
        hierarchy,
        hspt,
        optimizer: opt,
        extent: model.extent,
    })
}
