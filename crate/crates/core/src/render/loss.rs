//! Photometric loss `(1 - λ) L1 + λ (1 - SSIM)` with its exact gradient.
//!
//! SSIM uses an 11-tap Gaussian window (σ = 1.5) applied separably with zero
//! padding, computed per channel and averaged over all pixels and channels.

use super::Image;
use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `dL / d rendered`, row-major RGB.
    pub grad: Vec<f64>,
}

fn window() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut w: [f64; WINDOW] = std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SIGMA * SIGMA)).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable zero-padded filtering. The kernel is symmetric, so this is its
/// own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Sum of the SSIM map of one channel and the gradient of that sum.
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; WINDOW], want_grad: bool) -> (f64, Vec<f64>) {
    let n = w * h;
    let mx = blur(x, w, h, k);
    let my = blur(y, w, h, k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let bxx = blur(&xx, w, h, k);
    let byy = blur(&yy, w, h, k);
    let bxy = blur(&xy, w, h, k);

    let mut sum = 0.0;
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let mut gc = vec![0.0; n];
    for p in 0..n {
        let (mu_x, mu_y) = (mx[p], my[p]);
        let sxx = bxx[p] - mu_x * mu_x;
        let syy = byy[p] - mu_y * mu_y;
        let sxy = bxy[p] - mu_x * mu_y;
        let n1 = 2.0 * mu_x * mu_y + C1;
        let n2 = 2.0 * sxy + C2;
        let d1 = mu_x * mu_x + mu_y * mu_y + C1;
        let d2 = sxx + syy + C2;
        let s = n1 * n2 / (d1 * d2);
        sum += s;
        if want_grad {
            let ds_dmx = 2.0 * mu_y * n2 / (d1 * d2) - s * 2.0 * mu_x / d1;
            let ds_dsxx = -s / d2;
            let ds_dsxy = 2.0 * n1 / (d1 * d2);
            ga[p] = ds_dmx - 2.0 * mu_x * ds_dsxx - mu_y * ds_dsxy;
            gb[p] = ds_dsxx;
            gc[p] = ds_dsxy;
        }
    }
    if !want_grad {
        return (sum, Vec::new());
    }
    let ba = blur(&ga, w, h, k);
    let bb = blur(&gb, w, h, k);
    let bc = blur(&gc, w, h, k);
    let grad = (0..n).map(|q| ba[q] + 2.0 * x[q] * bb[q] + y[q] * bc[q]).collect();
    (sum, grad)
}

fn channel(data: &[f64], c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(3).copied().collect()
}

fn evaluate(x: &[f64], y: &[f64], w: usize, h: usize, lambda: f64, want_grad: bool) -> LossValue {
    assert_eq!(x.len(), w * h * 3);
    assert_eq!(y.len(), x.len());
    let total = x.len() as f64;
    let k = window();
    let mut ssim_sum = 0.0;
    let mut grad = if want_grad { vec![0.0; x.len()] } else { Vec::new() };
    for c in 0..3 {
        let (s, g) = ssim_channel(&channel(x, c), &channel(y, c), w, h, &k, want_grad);
        ssim_sum += s;
        if want_grad {
            for (p, v) in g.into_iter().enumerate() {
                grad[p * 3 + c] = -lambda * v / total;
            }
        }
    }
    let l1 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / total;
    if want_grad {
        for (g, (a, b)) in grad.iter_mut().zip(x.iter().zip(y)) {
            let sign = if a > b {
                1.0
            } else if a < b {
                -1.0
            } else {
                0.0
            };
            *g += (1.0 - lambda) * sign / total;
        }
    }
    let ssim = ssim_sum / total;
    LossValue {
        value: (1.0 - lambda) * l1 + lambda * (1.0 - ssim),
        l1,
        ssim,
        grad,
    }
}

/// Loss and gradient for row-major RGB buffers of `w × h` pixels.
pub fn loss_f64(rendered: &[f64], target: &[f64], w: usize, h: usize, lambda: f64) -> Result<LossValue> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("loss weight must lie in [0, 1], got {lambda}")));
    }
    if rendered.len() != w * h * 3 || target.len() != rendered.len() {
        return Err(Error::InvalidInput(format!(
            "loss buffers of {} and {} values do not match {w}x{h} RGB",
            rendered.len(),
            target.len()
        )));
    }
    Ok(evaluate(rendered, target, w, h, lambda, true))
}

pub fn loss(rendered: &Image, target: &Image, lambda: f64) -> Result<LossValue> {
    if !rendered.same_size(target) {
        return Err(Error::InvalidInput(format!(
            "rendered image is {}x{}, target is {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    loss_f64(&rendered.to_f64(), &target.to_f64(), rendered.width, rendered.height, lambda)
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::InvalidInput("SSIM images differ in size".into()));
    }
    Ok(evaluate(&a.to_f64(), &b.to_f64(), a.width, a.height, 0.0, false).ssim)
}
