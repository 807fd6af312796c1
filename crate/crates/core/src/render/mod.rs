//! Deterministic CPU splatting renderer with an analytic backward pass.
//!
//! Gaussians are projected with the local affine approximation of the
//! perspective map, sorted by camera depth (ties by input position) and
//! alpha-composited front to back per pixel. Pixel `(x, y)` samples the
//! image plane at `(x, y)`. All arithmetic is `f64`; [`Image`] stores `f32`.
//!
//! Work is split into 16×16 tiles. Each tile keeps the global depth order,
//! so the result does not depend on the tiling or the thread count, and the
//! backward pass reduces per-tile partial gradients in tile order.

mod image;
mod loss;

pub use image::Image;
pub use loss::{loss, loss_f64, ssim, LossValue};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{Camera, LOW_PASS};
use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;

/// Largest per-Gaussian alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// Degree-1 real SH normalization.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const TILE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Contributions with squared Mahalanobis distance above this are
    /// skipped. `f64::INFINITY` evaluates every Gaussian at every pixel.
    pub max_mahalanobis_sq: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { max_mahalanobis_sq: 36.0 }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        Self {
            max_mahalanobis_sq: f64::INFINITY,
        }
    }
}

/// Gradients per input Gaussian. Only the degree-1 SH coefficients are
/// evaluated, so only they receive gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianGradients {
    pub mean: Vec<[f64; 3]>,
    pub scale: Vec<[f64; 3]>,
    /// With respect to the raw (unnormalized) quaternion `[w, x, y, z]`.
    pub rotation: Vec<[f64; 4]>,
    pub opacity: Vec<f64>,
    pub base_color: Vec<[f64; 3]>,
    pub sh_rest: Vec<[f64; 9]>,
}

impl GaussianGradients {
    fn zeros(n: usize) -> Self {
        Self {
            mean: vec![[0.0; 3]; n],
            scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity: vec![0.0; n],
            base_color: vec![[0.0; 3]; n],
            sh_rest: vec![[0.0; 9]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    /// True if every partial of Gaussian `i` is zero.
    pub fn is_zero(&self, i: usize) -> bool {
        self.mean[i]
            .iter()
            .chain(&self.scale[i])
            .chain(&self.rotation[i])
            .chain(&self.base_color[i])
            .chain(&self.sh_rest[i])
            .all(|&v| v == 0.0)
            && self.opacity[i] == 0.0
    }
}

/// Rotation of the normalized quaternion.
fn rotation(qn: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *qn;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `<G, R(q)>` with respect to a unit quaternion.
fn rotation_vjp(qn: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *qn;
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)] + w * g[(2, 1)] - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)] + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [gw, gx, gy, gz]
}

/// A projected Gaussian plus what the backward pass needs.
#[derive(Clone, Debug)]
struct Splat {
    index: u32,
    depth: f64,
    mean2d: [f64; 2],
    /// Inverse 2D covariance `[a, b, c]`: `q = a dx² + 2 b dx dy + c dy²`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    bbox: [usize; 4],
    t: Vector3<f64>,
    cov3: Matrix3<f64>,
    m: Matrix3<f64>,
    r: Matrix3<f64>,
    scale: Vector3<f64>,
    qn: [f64; 4],
    qnorm: f64,
    j: Matrix2x3<f64>,
    dir: Vector3<f64>,
    vnorm: f64,
    sh: Option<[f64; 9]>,
}

fn project(i: usize, g: &GaussianAttributes, cam: &Camera, w: &Matrix3<f64>, opts: &RenderOptions) -> Result<Option<Splat>> {
    if !g.is_finite() {
        return Err(Error::InvalidInput(format!("Gaussian {i} has non-finite attributes")));
    }
    let mean = g.mean_vec();
    let t = w * (mean - cam.position_vec());
    if !(t.z > cam.near && t.z < cam.far) {
        return Ok(None);
    }
    let q = g.quaternion();
    let qnorm = q.norm();
    if qnorm == 0.0 {
        return Err(Error::InvalidInput(format!("Gaussian {i} has a zero quaternion")));
    }
    let qn = [q.w / qnorm, q.i / qnorm, q.j / qnorm, q.k / qnorm];
    let r = rotation(&qn);
    let scale = g.scale_vec();
    let m = r * Matrix3::from_diagonal(&scale);
    let cov3 = m * m.transpose();
    let j = cam.projection_jacobian(&t);
    let jw = j * w;
    let cov2d = jw * cov3 * jw.transpose() + Matrix2::identity() * LOW_PASS;
    let det = cov2d.determinant();
    if !(det > 0.0) {
        return Ok(None);
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mean2d = cam.project_camera_point(&t);
    let (wd, ht) = (cam.width() as f64, cam.height() as f64);
    let (x0, x1, y0, y1) = if opts.max_mahalanobis_sq.is_finite() {
        let rx = (opts.max_mahalanobis_sq * cov2d[(0, 0)]).sqrt();
        let ry = (opts.max_mahalanobis_sq * cov2d[(1, 1)]).sqrt();
        (
            (mean2d.x - rx).ceil(),
            (mean2d.x + rx).floor(),
            (mean2d.y - ry).ceil(),
            (mean2d.y + ry).floor(),
        )
    } else {
        (0.0, wd - 1.0, 0.0, ht - 1.0)
    };
    let (x0, x1, y0, y1) = (x0.max(0.0), x1.min(wd - 1.0), y0.max(0.0), y1.min(ht - 1.0));
    if !(x0 <= x1 && y0 <= y1) {
        return Ok(None);
    }
    let v = mean - cam.position_vec();
    let vnorm = v.norm();
    let dir = v / vnorm;
    let sh = (g.sh_rest.len() >= 9).then(|| std::array::from_fn(|k| g.sh_rest[k] as f64));
    let mut color = [g.base_color[0] as f64, g.base_color[1] as f64, g.base_color[2] as f64];
    if let Some(f) = &sh {
        for (ch, c) in color.iter_mut().enumerate() {
            *c += SH_C1 * (-dir.y * f[ch] + dir.z * f[3 + ch] - dir.x * f[6 + ch]);
        }
    }
    Ok(Some(Splat {
        index: i as u32,
        depth: t.z,
        mean2d: [mean2d.x, mean2d.y],
        conic,
        opacity: g.opacity as f64,
        color,
        bbox: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
        t,
        cov3,
        m,
        r,
        scale,
        qn,
        qnorm,
        j,
        dir,
        vnorm,
        sh,
    }))
}

impl Splat {
    #[inline]
    fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2] && y >= self.bbox[1] && y <= self.bbox[3]
    }

    /// `(alpha, clamped, gaussian, dx, dy, q)` at pixel `(x, y)`, or `None`
    /// past the cutoff.
    #[inline]
    fn alpha_at(&self, x: usize, y: usize, max_q: f64) -> Option<(f64, bool, f64, f64, f64)> {
        let dx = x as f64 - self.mean2d[0];
        let dy = y as f64 - self.mean2d[1];
        let q = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        if q > max_q {
            return None;
        }
        let gauss = (-0.5 * q).exp();
        let a = self.opacity * gauss;
        if a > ALPHA_MAX {
            Some((ALPHA_MAX, true, gauss, dx, dy))
        } else {
            Some((a, false, gauss, dx, dy))
        }
    }
}

struct TileResult {
    pixels: Vec<f64>,
    final_t: Vec<f64>,
    /// Number of tile-list entries visited per pixel.
    stop: Vec<u32>,
}

/// Forward pass state, reusable for the backward pass.
pub struct RenderPass {
    width: usize,
    height: usize,
    n_inputs: usize,
    opts: RenderOptions,
    cam: Camera,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    pixels: Vec<f64>,
    final_t: Vec<f64>,
    stop: Vec<u32>,
}

impl RenderPass {
    pub fn new(gs: &[GaussianAttributes], cam: &Camera, opts: &RenderOptions) -> Result<Self> {
        cam.validate()?;
        let w = cam.view_rotation();
        let projected: Vec<Option<Splat>> = gs
            .par_iter()
            .enumerate()
            .map(|(i, g)| project(i, g, cam, &w, opts))
            .collect::<Result<_>>()?;
        let mut splats: Vec<Splat> = projected.into_iter().flatten().collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

        let (width, height) = (cam.width(), cam.height());
        let tiles_x = width.div_ceil(TILE);
        let tiles_y = height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (si, s) in splats.iter().enumerate() {
            for ty in s.bbox[1] / TILE..=s.bbox[3] / TILE {
                for tx in s.bbox[0] / TILE..=s.bbox[2] / TILE {
                    tiles[ty * tiles_x + tx].push(si as u32);
                }
            }
        }

        let mut pass = Self {
            width,
            height,
            n_inputs: gs.len(),
            opts: *opts,
            cam: cam.clone(),
            splats,
            tiles,
            tiles_x,
            pixels: vec![0.0; width * height * 3],
            final_t: vec![1.0; width * height],
            stop: vec![0; width * height],
        };
        let results: Vec<TileResult> = (0..pass.tiles.len()).into_par_iter().map(|t| pass.forward_tile(t)).collect();
        for (t, r) in results.into_iter().enumerate() {
            let mut k = 0;
            for (x, y) in pass.tile_pixels(t) {
                let p = y * width + x;
                pass.pixels[p * 3..p * 3 + 3].copy_from_slice(&r.pixels[k * 3..k * 3 + 3]);
                pass.final_t[p] = r.final_t[k];
                pass.stop[p] = r.stop[k];
                k += 1;
            }
        }
        Ok(pass)
    }

    fn tile_pixels(&self, t: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let x1 = (x0 + TILE).min(self.width);
        let y1 = (y0 + TILE).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    fn forward_tile(&self, t: usize) -> TileResult {
        let list = &self.tiles[t];
        let max_q = self.opts.max_mahalanobis_sq;
        let mut out = TileResult {
            pixels: Vec::with_capacity(TILE * TILE * 3),
            final_t: Vec::with_capacity(TILE * TILE),
            stop: Vec::with_capacity(TILE * TILE),
        };
        for (x, y) in self.tile_pixels(t) {
            let mut c = [0.0; 3];
            let mut tr = 1.0;
            let mut stop = list.len();
            for (k, &si) in list.iter().enumerate() {
                let s = &self.splats[si as usize];
                if !s.covers(x, y) {
                    continue;
                }
                let Some((a, ..)) = s.alpha_at(x, y, max_q) else { continue };
                for ch in 0..3 {
                    c[ch] += s.color[ch] * a * tr;
                }
                tr *= 1.0 - a;
                if tr < T_MIN {
                    stop = k + 1;
                    break;
                }
            }
            out.pixels.extend_from_slice(&c);
            out.final_t.push(tr);
            out.stop.push(stop as u32);
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of inputs that project into the image.
    pub fn visible(&self) -> usize {
        self.splats.len()
    }

    /// Rendered RGB, row-major, in full precision.
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Transmittance left after compositing, per pixel.
    pub fn final_transmittance(&self) -> &[f64] {
        &self.final_t
    }

    pub fn image(&self) -> Image {
        Image::from_f64(self.width, self.height, &self.pixels)
    }

    /// Gradients of a loss with pixel gradient `dl_dpixels` (row-major RGB).
    pub fn backward(&self, dl_dpixels: &[f64]) -> Result<GaussianGradients> {
        if dl_dpixels.len() != self.pixels.len() {
            return Err(Error::InvalidInput(format!(
                "pixel gradient has {} values, image has {}",
                dl_dpixels.len(),
                self.pixels.len()
            )));
        }
        // Per splat: d/d mean2d (2), conic (3), opacity (1), color (3).
        let partials: Vec<Vec<[f64; 9]>> = (0..self.tiles.len()).into_par_iter().map(|t| self.backward_tile(t, dl_dpixels)).collect();
        let mut acc = vec![[0.0f64; 9]; self.splats.len()];
        for (t, part) in partials.iter().enumerate() {
            for (k, &si) in self.tiles[t].iter().enumerate() {
                let dst = &mut acc[si as usize];
                for (d, s) in dst.iter_mut().zip(&part[k]) {
                    *d += s;
                }
            }
        }
        let w = self.cam.view_rotation();
        let per_splat: Vec<_> = self.splats.par_iter().zip(acc.par_iter()).map(|(s, a)| self.chain(s, a, &w)).collect();
        let mut grads = GaussianGradients::zeros(self.n_inputs);
        for (s, g) in self.splats.iter().zip(per_splat) {
            let i = s.index as usize;
            grads.mean[i] = g.0;
            grads.scale[i] = g.1;
            grads.rotation[i] = g.2;
            grads.opacity[i] = g.3;
            grads.base_color[i] = g.4;
            grads.sh_rest[i] = g.5;
        }
        Ok(grads)
    }

    /// [`RenderPass::backward`] with an image-shaped gradient.
    pub fn backward_image(&self, dl: &Image) -> Result<GaussianGradients> {
        self.backward(&dl.to_f64())
    }

    fn backward_tile(&self, t: usize, dl: &[f64]) -> Vec<[f64; 9]> {
        let list = &self.tiles[t];
        let max_q = self.opts.max_mahalanobis_sq;
        let mut part = vec![[0.0f64; 9]; list.len()];
        for (x, y) in self.tile_pixels(t) {
            let p = y * self.width + x;
            let g = [dl[p * 3], dl[p * 3 + 1], dl[p * 3 + 2]];
            if g == [0.0; 3] {
                continue;
            }
            let mut tr = self.final_t[p];
            let mut behind = [0.0f64; 3];
            for k in (0..self.stop[p] as usize).rev() {
                let s = &self.splats[list[k] as usize];
                if !s.covers(x, y) {
                    continue;
                }
                let Some((a, clamped, gauss, dx, dy)) = s.alpha_at(x, y, max_q) else {
                    continue;
                };
                let t_i = tr / (1.0 - a);
                let acc = &mut part[k];
                let mut dl_da = 0.0;
                for ch in 0..3 {
                    acc[6 + ch] += g[ch] * a * t_i;
                    dl_da += g[ch] * t_i * (s.color[ch] - behind[ch]);
                    behind[ch] = s.color[ch] * a + (1.0 - a) * behind[ch];
                }
                tr = t_i;
                if clamped {
                    continue;
                }
                acc[5] += dl_da * gauss;
                let dl_dq = dl_da * (-0.5 * s.opacity * gauss);
                let [ca, cb, cc] = s.conic;
                // q = a dx² + 2 b dx dy + c dy², d = pixel - mean2d
                acc[0] += dl_dq * -2.0 * (ca * dx + cb * dy);
                acc[1] += dl_dq * -2.0 * (cb * dx + cc * dy);
                acc[2] += dl_dq * dx * dx;
                acc[3] += dl_dq * 2.0 * dx * dy;
                acc[4] += dl_dq * dy * dy;
            }
        }
        part
    }

    #[allow(clippy::type_complexity)]
    fn chain(&self, s: &Splat, a: &[f64; 9], w: &Matrix3<f64>) -> ([f64; 3], [f64; 3], [f64; 4], f64, [f64; 3], [f64; 9]) {
        let g_mean2d = Vector2::new(a[0], a[1]);
        let g_color = [a[6], a[7], a[8]];
        let mut g_mean = Vector3::zeros();

        // color = base + C1 (-y f0 + z f1 - x f2)
        let mut g_sh = [0.0; 9];
        if let Some(f) = &s.sh {
            let d = s.dir;
            let mut g_dir = Vector3::zeros();
            for ch in 0..3 {
                g_sh[ch] = -SH_C1 * d.y * g_color[ch];
                g_sh[3 + ch] = SH_C1 * d.z * g_color[ch];
                g_sh[6 + ch] = -SH_C1 * d.x * g_color[ch];
                g_dir.x -= SH_C1 * f[6 + ch] * g_color[ch];
                g_dir.y -= SH_C1 * f[ch] * g_color[ch];
                g_dir.z += SH_C1 * f[3 + ch] * g_color[ch];
            }
            g_mean += (g_dir - d * d.dot(&g_dir)) / s.vnorm;
        }

        // conic = cov2d⁻¹
        let minv = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
        let g_conic = Matrix2::new(a[2], a[3] * 0.5, a[3] * 0.5, a[4]);
        let g_cov2d = -(minv * g_conic * minv);

        // cov2d = T Σ Tᵀ + lp I, T = J W
        let tm = s.j * w;
        let g_cov3 = tm.transpose() * g_cov2d * tm;
        let g_t_mat = 2.0 * g_cov2d * tm * s.cov3;
        let g_j = g_t_mat * w.transpose();

        let [fx, fy] = self.cam.focal;
        let (x, y, z) = (s.t.x, s.t.y, s.t.z);
        let (z2, z3) = (z * z, z * z * z);
        let mut g_t = s.j.transpose() * g_mean2d;
        g_t.x += g_j[(0, 2)] * (-fx / z2);
        g_t.y += g_j[(1, 2)] * (-fy / z2);
        g_t.z += g_j[(0, 0)] * (-fx / z2) + g_j[(0, 2)] * (2.0 * fx * x / z3) + g_j[(1, 1)] * (-fy / z2) + g_j[(1, 2)] * (2.0 * fy * y / z3);
        g_mean += w.transpose() * g_t;

        // Σ = M Mᵀ, M = R S
        let g_m = 2.0 * g_cov3 * s.m;
        let mut g_scale = [0.0; 3];
        let mut g_r = Matrix3::zeros();
        for k in 0..3 {
            for i in 0..3 {
                g_scale[k] += g_m[(i, k)] * s.r[(i, k)];
                g_r[(i, k)] = g_m[(i, k)] * s.scale[k];
            }
        }
        let g_qn = rotation_vjp(&s.qn, &g_r);
        let dot: f64 = (0..4).map(|k| g_qn[k] * s.qn[k]).sum();
        let g_q = std::array::from_fn(|k| (g_qn[k] - s.qn[k] * dot) / s.qnorm);

        ([g_mean.x, g_mean.y, g_mean.z], g_scale, g_q, a[5], g_color, g_sh)
    }
}

/// Renders with default options.
pub fn render(gs: &[GaussianAttributes], cam: &Camera) -> Result<Image> {
    Ok(RenderPass::new(gs, cam, &RenderOptions::default())?.image())
}

/// Gradients of a loss whose image gradient is `dl_dimage`.
pub fn backward(gs: &[GaussianAttributes], cam: &Camera, dl_dimage: &Image) -> Result<GaussianGradients> {
    let pass = RenderPass::new(gs, cam, &RenderOptions::default())?;
    if dl_dimage.width != pass.width || dl_dimage.height != pass.height {
        return Err(Error::InvalidInput("gradient image size differs from the camera resolution".into()));
    }
    pass.backward_image(dl_dimage)
}
