//! Procedural scenes and camera paths for tests, benchmarks and demos.
//!
//! Everything is seeded; the same arguments always give the same output.
//! World `+z` is up.

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::gaussian::GaussianAttributes;
use crate::store::PlyPoint;

const UP: [f64; 3] = [0.0, 0.0, 1.0];

fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> [f32; 4] {
    let q = UnitQuaternion::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI / 2.0..PI / 2.0),
        rng.random_range(-PI..PI),
    );
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

/// `n` anisotropic leaves uniformly placed in `[-extent, extent]³`.
pub fn random_leaves<R: Rng + ?Sized>(rng: &mut R, n: usize, extent: f32) -> Vec<GaussianAttributes> {
    let scale_hi = (extent / (n as f32).cbrt()).max(1e-3);
    (0..n)
        .map(|_| {
            GaussianAttributes::new(
                std::array::from_fn(|_| rng.random_range(-extent..extent)),
                std::array::from_fn(|_| rng.random_range(0.05 * scale_hi..scale_hi)),
                random_unit_quaternion(rng),
                rng.random_range(0.05..1.0),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            )
        })
        .collect()
}

/// Camera somewhere in `[-extent, extent]³` looking at a random point of the
/// same box.
pub fn random_camera<R: Rng + ?Sized>(rng: &mut R, extent: f64, resolution: [u32; 2]) -> Camera {
    let eye: [f64; 3] = std::array::from_fn(|_| rng.random_range(-extent..extent));
    let mut target: [f64; 3] = std::array::from_fn(|_| rng.random_range(-extent..extent));
    if (0..3).all(|k| (target[k] - eye[k]).abs() < 1e-6) {
        target[0] += 1.0;
    }
    Camera::look_at(eye, target, UP, rng.random_range(0.5..1.8), resolution)
}

/// Grid of box-shaped buildings separated by streets, with Gaussians on
/// facades, roofs and the ground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CityBlockConfig {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_size: f64,
    pub street_width: f64,
    pub max_height: f64,
    /// Approximate number of Gaussians in the whole scene.
    pub gaussians: usize,
}

impl Default for CityBlockConfig {
    fn default() -> Self {
        Self {
            blocks_x: 6,
            blocks_y: 6,
            block_size: 20.0,
            street_width: 10.0,
            max_height: 30.0,
            gaussians: 100_000,
        }
    }
}

impl CityBlockConfig {
    pub fn pitch(&self) -> f64 {
        self.block_size + self.street_width
    }

    /// Extent of the whole grid along x and y.
    pub fn size(&self) -> [f64; 2] {
        [self.blocks_x as f64 * self.pitch(), self.blocks_y as f64 * self.pitch()]
    }
}

/// Flat Gaussian lying in a plane with normal along `axis`.
fn surfel(center: Vector3<f64>, axis: usize, size: f32, color: [f32; 3], rng: &mut ChaCha8Rng) -> GaussianAttributes {
    let mut scale = [size; 3];
    scale[axis] = size * 0.1;
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.08..0.08f32);
    GaussianAttributes::new(
        [center.x as f32, center.y as f32, center.z as f32],
        scale,
        [1.0, 0.0, 0.0, 0.0],
        rng.random_range(0.7..0.95),
        color.map(|c| (c + jitter(rng)).clamp(0.0, 1.0)),
    )
}

pub fn city_block(seed: u64, cfg: &CityBlockConfig) -> Vec<GaussianAttributes> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pitch = cfg.pitch();
    let [sx, sy] = cfg.size();
    // Surface areas decide how the Gaussian budget is spread.
    let heights: Vec<f64> = (0..cfg.blocks_x * cfg.blocks_y)
        .map(|_| rng.random_range(0.3 * cfg.max_height..cfg.max_height))
        .collect();
    let b = cfg.block_size;
    let building_area: f64 = heights.iter().map(|h| 4.0 * b * h + b * b).sum();
    let ground_area = sx * sy;
    let density = cfg.gaussians as f64 / (building_area + ground_area);
    let spacing = (1.0 / density).sqrt();
    let size = (spacing * 0.6) as f32;

    let mut out = Vec::with_capacity(cfg.gaussians + cfg.gaussians / 10);
    let ground_n = (ground_area * density) as usize;
    for _ in 0..ground_n {
        let p = Vector3::new(rng.random_range(0.0..sx), rng.random_range(0.0..sy), 0.0);
        let street = (p.x % pitch) > b || (p.y % pitch) > b;
        let color = if street { [0.25, 0.25, 0.28] } else { [0.35, 0.5, 0.3] };
        out.push(surfel(p, 2, size, color, &mut rng));
    }
    for (i, &h) in heights.iter().enumerate() {
        let (bx, by) = ((i % cfg.blocks_x) as f64 * pitch, (i / cfg.blocks_x) as f64 * pitch);
        let color = [rng.random_range(0.3..0.9), rng.random_range(0.3..0.9), rng.random_range(0.3..0.9)];
        let faces = [(0usize, bx), (0, bx + b), (1, by), (1, by + b)];
        for &(axis, at) in &faces {
            let n = (b * h * density) as usize;
            for _ in 0..n {
                let along = rng.random_range(0.0..b);
                let z = rng.random_range(0.0..h);
                let p = if axis == 0 {
                    Vector3::new(at, by + along, z)
                } else {
                    Vector3::new(bx + along, at, z)
                };
                // Windows: darker bands every few meters.
                let shade = if (z % 3.0) < 1.0 { 0.6 } else { 1.0 };
                out.push(surfel(p, axis, size, color.map(|c| c * shade), &mut rng));
            }
        }
        for _ in 0..(b * b * density) as usize {
            let p = Vector3::new(bx + rng.random_range(0.0..b), by + rng.random_range(0.0..b), h);
            out.push(surfel(p, 2, size, [0.5, 0.45, 0.4], &mut rng));
        }
    }
    out
}

/// Eye-level walk along the street between block rows 0 and 1, looking
/// down the street with a slow sideways sway.
pub fn street_path(cfg: &CityBlockConfig, frames: usize, resolution: [u32; 2]) -> Vec<Camera> {
    let y = cfg.block_size + cfg.street_width / 2.0;
    let [sx, _] = cfg.size();
    (0..frames)
        .map(|i| {
            let t = i as f64 / frames.max(1) as f64;
            let x = 2.0 + t * (sx - 4.0);
            let sway = (t * TAU * 2.0).sin() * 0.3;
            let eye = [x, y, 1.7];
            let target = [x + 10.0, y + 10.0 * sway, 1.7];
            Camera::look_at(eye, target, UP, 1.4, resolution)
        })
        .collect()
}

/// Closed orbit of `frames` poses around `center`, looking at it.
pub fn looping_path(center: [f64; 3], radius: f64, height: f64, frames: usize, resolution: [u32; 2]) -> Vec<Camera> {
    (0..frames)
        .map(|i| {
            let a = TAU * i as f64 / frames as f64;
            let eye = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2] + height];
            Camera::look_at(eye, center, UP, 1.0, resolution)
        })
        .collect()
}

/// `clusters` groups of `per_cluster` views. Each group sits around its own
/// anchor on a circle of `radius` and looks at a point near the anchor's
/// ground position, so views within a group see the same content.
pub fn clustered_views(seed: u64, center: [f64; 3], radius: f64, clusters: usize, per_cluster: usize, resolution: [u32; 2]) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        let a = TAU * c as f64 / clusters as f64;
        let anchor = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]];
        for _ in 0..per_cluster {
            let eye = [
                anchor[0] + rng.random_range(-1.0..1.0),
                anchor[1] + rng.random_range(-1.0..1.0),
                anchor[2] + rng.random_range(1.0..3.0),
            ];
            let target = [
                anchor[0] + 6.0 * a.cos() + rng.random_range(-1.0..1.0),
                anchor[1] + 6.0 * a.sin() + rng.random_range(-1.0..1.0),
                anchor[2],
            ];
            out.push(Camera::look_at(eye, target, UP, 1.2, resolution));
        }
    }
    out
}

/// Ground truth for training experiments.
#[derive(Clone, Debug)]
pub struct ProceduralScene {
    pub gaussians: Vec<GaussianAttributes>,
    /// Large Gaussians on a distant shell standing in for the sky.
    pub sky: Vec<GaussianAttributes>,
    pub center: [f64; 3],
    /// Radius of a sphere that contains every non-sky Gaussian mean.
    pub radius: f64,
}

impl ProceduralScene {
    /// Scene and sky together, scene first.
    pub fn all(&self) -> Vec<GaussianAttributes> {
        self.gaussians.iter().chain(&self.sky).cloned().collect()
    }
}

/// Colored blobs and a checkered floor inside a sphere of radius 2, plus a
/// sky shell of radius 30. `n` is the number of scene Gaussians.
pub fn procedural_scene(seed: u64, n: usize) -> ProceduralScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor_n = n / 3;
    let mut gs = Vec::with_capacity(n);
    let cell = 0.3f32;
    let floor_scale = (16.0 / floor_n.max(1) as f32).sqrt() * 0.7;
    for _ in 0..floor_n {
        let x: f32 = rng.random_range(-2.0..2.0);
        let y: f32 = rng.random_range(-2.0..2.0);
        let checker = ((x / cell).floor() as i64 + (y / cell).floor() as i64).rem_euclid(2) == 0;
        let color = if checker { [0.85, 0.8, 0.7] } else { [0.2, 0.25, 0.35] };
        gs.push(GaussianAttributes::new(
            [x, y, -1.0],
            [floor_scale, floor_scale, floor_scale * 0.15],
            [1.0, 0.0, 0.0, 0.0],
            0.9,
            color,
        ));
    }
    let blobs = 6;
    let per_blob = (n - floor_n) / blobs;
    for b in 0..blobs {
        let a = TAU * b as f64 / blobs as f64;
        let c = Vector3::new(1.1 * a.cos(), 1.1 * a.sin(), rng.random_range(-0.6..0.2));
        let r = rng.random_range(0.3..0.5);
        let base = [rng.random_range(0.1..1.0f32), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
        let blob_scale = (r * r * 4.0 / per_blob.max(1) as f64).sqrt() as f32 * 0.8;
        for _ in 0..per_blob {
            // Points on the blob surface, striped by height.
            let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0f64));
            let d = if d.norm() > 1e-6 { d.normalize() } else { Vector3::z() };
            let p = c + d * r;
            let stripe = if ((p.z * 12.0).floor() as i64).rem_euclid(2) == 0 { 1.0 } else { 0.55 };
            gs.push(GaussianAttributes::new(
                [p.x as f32, p.y as f32, p.z as f32],
                [blob_scale, blob_scale, blob_scale * 0.4],
                random_unit_quaternion(&mut rng),
                0.9,
                base.map(|v| v * stripe),
            ));
        }
    }
    let sky_n = 256;
    let sky_radius = 30.0;
    let sky_scale = (4.0 * PI * sky_radius * sky_radius / sky_n as f64).sqrt() as f32 * 0.8;
    let sky = fibonacci_sphere(sky_n)
        .into_iter()
        .map(|d| {
            let t = ((d.z + 1.0) / 2.0) as f32;
            GaussianAttributes::isotropic(
                [(d.x * sky_radius) as f32, (d.y * sky_radius) as f32, (d.z * sky_radius) as f32],
                sky_scale,
                0.95,
                [0.45 + 0.3 * t, 0.55 + 0.3 * t, 0.8],
            )
        })
        .collect();
    ProceduralScene {
        gaussians: gs,
        sky,
        center: [0.0; 3],
        radius: 2.5,
    }
}

/// Evenly spread unit directions.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// `count` cameras on a band of the sphere of `distance` around `center`,
/// all looking at it.
pub fn orbit_views(center: [f64; 3], distance: f64, count: usize, resolution: [u32; 2], seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let az = TAU * (i as f64 + rng.random_range(-0.3..0.3)) / count as f64;
            let el: f64 = rng.random_range(0.15..0.8);
            let eye = [
                center[0] + distance * el.cos() * az.cos(),
                center[1] + distance * el.cos() * az.sin(),
                center[2] + distance * el.sin(),
            ];
            Camera::look_at(eye, center, UP, 0.9, resolution)
        })
        .collect()
}

/// Sparse point cloud sampled from Gaussian means: every `stride`-th mean,
/// displaced by up to `noise` per axis, with the Gaussian's base color.
pub fn point_cloud(gs: &[GaussianAttributes], stride: usize, noise: f32, seed: u64) -> Vec<PlyPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gs.iter()
        .step_by(stride.max(1))
        .map(|g| PlyPoint {
            position: g.mean.map(|m| m + if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 }),
            color: Some(g.base_color.map(|c| c.clamp(0.0, 1.0))),
        })
        .collect()
}

/// ASCII PLY text for `points`, colors as 8-bit.
pub fn to_ply_ascii(points: &[PlyPoint]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    for p in points {
        let c = p.color.unwrap_or([0.5; 3]).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.position[0], p.position[1], p.position[2], c[0], c[1], c[2]
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frustum::sphere_intersects_frustum;

    #[test]
    fn seeded_generators_repeat() {
        let cfg = CityBlockConfig {
            gaussians: 5_000,
            ..Default::default()
        };
        assert_eq!(city_block(3, &cfg), city_block(3, &cfg));
        let n = city_block(3, &cfg).len();
        assert!(n > 3_000 && n < 7_000, "{n}");
        assert_eq!(procedural_scene(1, 900).gaussians, procedural_scene(1, 900).gaussians);
    }

    #[test]
    fn gaussians_are_valid() {
        let s = procedural_scene(2, 3000);
        for g in s.all() {
            g.check().unwrap();
        }
        for g in city_block(
            1,
            &CityBlockConfig {
                gaussians: 2000,
                ..Default::default()
            },
        ) {
            g.check().unwrap();
        }
    }

    #[test]
    fn orbit_views_see_the_center() {
        for cam in orbit_views([0.0; 3], 5.0, 16, [64, 64], 0) {
            assert!(sphere_intersects_frustum(&Vector3::zeros(), 0.01, &cam.frustum()));
            let p = cam.project_camera_point(&cam.to_camera(&Vector3::zeros()));
            assert!((p.x - 32.0).abs() < 1e-6 && (p.y - 32.0).abs() < 1e-6);
        }
    }

    #[test]
    fn looping_path_closes() {
        let p = looping_path([0.0; 3], 10.0, 2.0, 200, [32, 32]);
        assert_eq!(p.len(), 200);
        let d = (p[0].position_vec() - p[199].position_vec()).norm();
        assert!(d < 10.0 * TAU / 150.0);
    }

    #[test]
    fn ply_text_round_trips() {
        let pts = point_cloud(&procedural_scene(0, 300).gaussians, 3, 0.01, 0);
        let back = crate::store::read_ply_bytes(to_ply_ascii(&pts).as_bytes()).unwrap();
        assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.position, b.position);
        }
    }
}
