//! Central finite-difference oracle for the renderer's backward pass.

use glod_core::render::{RenderOptions, RenderPass};
use glod_core::{Camera, GaussianAttributes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCALE_LO: f32 = 0.1;
const SCALE_HI: f32 = 0.5;
/// Ten times the largest depth step taken by the oracle.
const MIN_DEPTH_GAP: f32 = 0.06;

const REL_STEP: f32 = 1e-3;
const FLOOR: f64 = 1e-3;

pub const KINDS: [&str; 6] = ["mean", "scale", "rotation", "opacity", "base_color", "sh_rest"];

/// Worst relative error per attribute kind for one scene.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub worst: [f64; 6],
    pub checked: usize,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.worst.iter().copied().fold(0.0, f64::max)
    }
}

pub fn micro_camera() -> Camera {
    Camera::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [40.0, 40.0], [16, 16])
}

/// At most 8 Gaussians in front of [`micro_camera`] with SH degree 1 and
/// opacities below the alpha clamp.
///
/// The image is not differentiable where a perturbation reorders two
/// Gaussians in depth or moves the transmittance cutoff, and central
/// differences are meaningless there. Scenes with depth gaps below
/// `MIN_DEPTH_GAP` or transmittance within 10x of the cutoff are redrawn.
pub fn micro_scene(rng: &mut ChaCha8Rng) -> Vec<GaussianAttributes> {
    loop {
        let gs = draw_scene(rng);
        let mut depths: Vec<f32> = gs.iter().map(|g| g.mean[2]).collect();
        depths.sort_by(f32::total_cmp);
        if depths.windows(2).any(|w| w[1] - w[0] < MIN_DEPTH_GAP) {
            continue;
        }
        let pass = RenderPass::new(&gs, &micro_camera(), &RenderOptions::exact()).unwrap();
        if pass.final_transmittance().iter().all(|&t| t > 1e-3) {
            return gs;
        }
    }
}

fn draw_scene(rng: &mut ChaCha8Rng) -> Vec<GaussianAttributes> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            let mut g = GaussianAttributes::new(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0)],
                std::array::from_fn(|_| rng.random_range(SCALE_LO..SCALE_HI)),
                q.map(|v| v / norm),
                rng.random_range(0.05..0.9),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            );
            g.sh_rest = (0..9).map(|_| rng.random_range(-0.5..0.5)).collect();
            g
        })
        .collect()
}

fn params(g: &mut GaussianAttributes) -> Vec<(usize, &mut f32)> {
    let mut out: Vec<(usize, &mut f32)> = Vec::new();
    out.extend(g.mean.iter_mut().map(|v| (0, v)));
    out.extend(g.scale.iter_mut().map(|v| (1, v)));
    out.extend(g.rotation.iter_mut().map(|v| (2, v)));
    out.push((3, &mut g.opacity));
    out.extend(g.base_color.iter_mut().map(|v| (4, v)));
    out.extend(g.sh_rest.iter_mut().take(9).map(|v| (5, v)));
    out
}

fn objective(gs: &[GaussianAttributes], cam: &Camera, up: &[f64]) -> f64 {
    let pass = RenderPass::new(gs, cam, &RenderOptions::exact()).unwrap();
    pass.pixels().iter().zip(up).map(|(p, u)| p * u).sum()
}

/// Compares every partial of `L = Σ up · pixels` against central
/// differences with base step `h = 1e-3 · max(|x|, 0.1)`.
///
/// Relative error is `|a - f| / max(|a|, |f|, floor)` where `floor` is
/// `1e-3` times the largest finite-difference magnitude of that attribute
/// kind in the scene, so partials that are numerically zero compare in
/// absolute terms.
pub fn check_scene(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = micro_scene(&mut rng);
    let cam = micro_camera();
    let up: Vec<f64> = (0..cam.width() * cam.height() * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pass = RenderPass::new(&gs, &cam, &RenderOptions::exact()).unwrap();
    let grads = pass.backward(&up).unwrap();

    let mut pairs: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..gs.len() {
        let analytic: Vec<f64> = grads.mean[i]
            .iter()
            .chain(&grads.scale[i])
            .chain(&grads.rotation[i])
            .chain(std::iter::once(&grads.opacity[i]))
            .chain(&grads.base_color[i])
            .chain(&grads.sh_rest[i])
            .copied()
            .collect();
        let count = params(&mut gs[i].clone()).len();
        for k in 0..count {
            let (kind, x) = {
                let mut g = gs[i].clone();
                let p = params(&mut g);
                (p[k].0, *p[k].1)
            };
            let h = REL_STEP * x.abs().max(0.1);
            let central = |h: f32| {
                let mut plus = gs.clone();
                let mut minus = gs.clone();
                *params(&mut plus[i])[k].1 = x + h;
                *params(&mut minus[i])[k].1 = x - h;
                let step = (x + h) as f64 - (x - h) as f64;
                (objective(&plus, &cam, &up) - objective(&minus, &cam, &up)) / step
            };
            // Richardson extrapolation of the steps h and h/2 cancels the
            // O(h²) truncation term.
            let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
            pairs.push((kind, analytic[k], fd));
        }
    }
    let mut floor = [0.0f64; 6];
    for &(kind, _, fd) in &pairs {
        floor[kind] = floor[kind].max(FLOOR * fd.abs());
    }
    let mut out = GradCheck {
        checked: pairs.len(),
        ..Default::default()
    };
    for &(kind, a, f) in &pairs {
        let denom = a.abs().max(f.abs()).max(floor[kind]).max(f64::MIN_POSITIVE);
        out.worst[kind] = out.worst[kind].max((a - f).abs() / denom);
    }
    out
}
