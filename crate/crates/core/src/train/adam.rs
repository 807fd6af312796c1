//! Adam over per-node Gaussian parameters.
//!
//! Parameters are optimized in an unconstrained space: log scale, raw
//! quaternion (renormalized after each step) and logit opacity. Stored
//! attributes stay in the linear data-model form.

use crate::error::{Error, Result};
use crate::gaussian::{sh_rest_len, GaussianAttributes};
use crate::hierarchy::NodeId;
use crate::render::GaussianGradients;

use super::config::AdamConfig;

const OPACITY_EPS: f64 = 1e-6;
const MIN_SCALE: f32 = 1e-8;

/// Effective learning rates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct StepSizes(Vec<f64>);

impl StepSizes {
    pub fn new(cfg: &AdamConfig, extent: f64, sh_len: usize) -> Self {
        let lr = &cfg.lr;
        let mut v = Vec::with_capacity(14 + sh_len);
        v.extend([lr.means * extent; 3]);
        v.extend([lr.scales; 3]);
        v.extend([lr.rotations; 4]);
        v.push(lr.opacity);
        v.extend([lr.colors; 3]);
        v.extend(std::iter::repeat_n(lr.sh_rest, sh_len));
        Self(v)
    }
}

/// First and second moments plus step counts, one row of `width` scalars
/// per node slot.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    width: usize,
    pub(crate) m: Vec<f32>,
    pub(crate) v: Vec<f32>,
    pub(crate) steps: Vec<u32>,
}

impl OptimizerState {
    pub fn new(nodes: usize, sh_degree: u8) -> Self {
        let width = 14 + sh_rest_len(sh_degree);
        Self {
            width,
            m: vec![0.0; nodes * width],
            v: vec![0.0; nodes * width],
            steps: vec![0; nodes],
        }
    }

    pub(crate) fn from_parts(width: usize, m: Vec<f32>, v: Vec<f32>, steps: Vec<u32>) -> Result<Self> {
        if width < 14 || m.len() != steps.len() * width || v.len() != m.len() {
            return Err(Error::InvalidInput("optimizer arrays are inconsistent".into()));
        }
        let s = Self { width, m, v, steps };
        s.check()?;
        Ok(s)
    }

    /// Scalars per node.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self, n: NodeId) -> u32 {
        self.steps[n as usize]
    }

    pub fn first_moment(&self, n: NodeId) -> &[f32] {
        &self.m[n as usize * self.width..][..self.width]
    }

    pub fn second_moment(&self, n: NodeId) -> &[f32] {
        &self.v[n as usize * self.width..][..self.width]
    }

    /// Grows to `nodes` slots; new slots start at zero.
    pub fn resize(&mut self, nodes: usize) {
        self.m.resize(nodes * self.width, 0.0);
        self.v.resize(nodes * self.width, 0.0);
        self.steps.resize(nodes, 0);
    }

    /// Zeroes the moments and step count of `n`.
    pub fn reset(&mut self, n: NodeId) {
        let r = n as usize * self.width..(n as usize + 1) * self.width;
        self.m[r.clone()].fill(0.0);
        self.v[r].fill(0.0);
        self.steps[n as usize] = 0;
    }

    /// Moments finite, second moments non-negative.
    pub fn check(&self) -> Result<()> {
        if let Some(i) = self.m.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite first moment at node {}", i / self.width)));
        }
        if let Some(i) = self.v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput(format!("invalid second moment at node {}", i / self.width)));
        }
        Ok(())
    }

    /// One Adam step of node `n` given the render gradient `k` of `grads`.
    pub(crate) fn step(&mut self, n: NodeId, g: &mut GaussianAttributes, grads: &GaussianGradients, k: usize, cfg: &AdamConfig, lr: &StepSizes) {
        let w = self.width;
        let mut x = to_params(g, w);
        let d = param_gradient(g, grads, k, w);
        let row = n as usize * w;
        let t = self.steps[n as usize] + 1;
        self.steps[n as usize] = t;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for j in 0..w {
            let m = cfg.beta1 * self.m[row + j] as f64 + (1.0 - cfg.beta1) * d[j];
            let v = cfg.beta2 * self.v[row + j] as f64 + (1.0 - cfg.beta2) * d[j] * d[j];
            self.m[row + j] = m as f32;
            self.v[row + j] = v as f32;
            x[j] -= lr.0[j] * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        }
        from_params(&x, g);
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_params(g: &GaussianAttributes, width: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(width);
    x.extend(g.mean.map(f64::from));
    x.extend(g.scale.map(|s| (s.max(MIN_SCALE) as f64).ln()));
    x.extend(g.rotation.map(f64::from));
    x.push(logit(g.opacity as f64));
    x.extend(g.base_color.map(f64::from));
    x.extend((0..width - 14).map(|i| g.sh_rest.get(i).copied().unwrap_or(0.0) as f64));
    x
}

fn from_params(x: &[f64], g: &mut GaussianAttributes) {
    g.mean = [x[0], x[1], x[2]].map(|v| v as f32);
    g.scale = [x[3], x[4], x[5]].map(|v| (v.exp() as f32).max(MIN_SCALE));
    let q = [x[6], x[7], x[8], x[9]];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    g.rotation = if n > 1e-12 && n.is_finite() {
        q.map(|v| (v / n) as f32)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    };
    g.opacity = sigmoid(x[10]) as f32;
    g.base_color = [x[11], x[12], x[13]].map(|v| v as f32);
    g.sh_rest = x[14..].iter().map(|&v| v as f32).collect();
}

/// Render gradient mapped into parameter space.
fn param_gradient(g: &GaussianAttributes, grads: &GaussianGradients, k: usize, width: usize) -> Vec<f64> {
    let mut d = Vec::with_capacity(width);
    d.extend(grads.mean[k]);
    d.extend((0..3).map(|j| grads.scale[k][j] * g.scale[j].max(MIN_SCALE) as f64));
    d.extend(grads.rotation[k]);
    let s = (g.opacity as f64).clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    d.push(grads.opacity[k] * s * (1.0 - s));
    d.extend(grads.base_color[k]);
    d.extend((0..width - 14).map(|i| grads.sh_rest[k].get(i).copied().unwrap_or(0.0)));
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::config::AdamConfig;

    fn grads_for(n: usize, f: impl Fn(&mut GaussianGradients)) -> GaussianGradients {
        let mut g = GaussianGradients {
            mean: vec![[0.0; 3]; n],
            scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity: vec![0.0; n],
            base_color: vec![[0.0; 3]; n],
            sh_rest: vec![[0.0; 9]; n],
        };
        f(&mut g);
        g
    }

    #[test]
    fn parameter_round_trip() {
        let mut g = GaussianAttributes::new([0.5, -1.0, 2.0], [0.1, 0.2, 0.3], [0.5, 0.5, 0.5, 0.5], 0.3, [0.1, 0.2, 0.9]).with_sh_degree(1);
        g.sh_rest[4] = 0.25;
        let x = to_params(&g, 23);
        let mut back = g.clone();
        from_params(&x, &mut back);
        for (a, b) in g.scale.iter().zip(&back.scale) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((g.opacity - back.opacity).abs() < 1e-6);
        assert_eq!(g.mean, back.mean);
        assert_eq!(g.sh_rest, back.sh_rest);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias-corrected first Adam step is lr · sign(g).
        let cfg = AdamConfig::default();
        let lr = StepSizes::new(&cfg, 1.0, 9);
        let mut st = OptimizerState::new(1, 1);
        let mut g = GaussianAttributes::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3]).with_sh_degree(1);
        let grads = grads_for(1, |d| {
            d.mean[0] = [2.0, -3.0, 0.0];
            d.base_color[0] = [0.0, 0.0, 1e-3];
        });
        st.step(0, &mut g, &grads, 0, &cfg, &lr);
        assert!((g.mean[0] as f64 + 1.6e-4).abs() < 1e-9);
        assert!((g.mean[1] as f64 - 1.6e-4).abs() < 1e-9);
        assert_eq!(g.mean[2], 0.0);
        assert!((g.base_color[2] as f64 - (0.5 - 2.5e-3)).abs() < 1e-7);
        assert_eq!(st.steps(0), 1);
        st.check().unwrap();
    }

    #[test]
    fn constrained_attributes_stay_valid() {
        let cfg = AdamConfig::default();
        let lr = StepSizes::new(&cfg, 1.0, 0);
        let mut st = OptimizerState::new(1, 0);
        let mut g = GaussianAttributes::isotropic([0.0; 3], 0.1, 0.99, [0.5; 3]);
        let grads = grads_for(1, |d| {
            d.scale[0] = [1e3, -1e3, 1e3];
            d.rotation[0] = [5.0, 1.0, -2.0, 0.5];
            d.opacity[0] = -1e3;
        });
        for _ in 0..500 {
            st.step(0, &mut g, &grads, 0, &cfg, &lr);
            g.check().unwrap();
        }
        assert!(g.opacity > 0.99);
    }

    #[test]
    fn reset_and_resize() {
        let mut st = OptimizerState::new(2, 0);
        st.m[20] = 1.0;
        st.steps[1] = 4;
        st.reset(1);
        assert!(st.first_moment(1).iter().all(|&x| x == 0.0));
        assert_eq!(st.steps(1), 0);
        st.resize(5);
        assert_eq!(st.len(), 5);
        assert!(st.second_moment(4).iter().all(|&x| x == 0.0));
        assert!(OptimizerState::from_parts(14, vec![f32::NAN; 14], vec![0.0; 14], vec![0]).is_err());
        assert!(OptimizerState::from_parts(14, vec![0.0; 14], vec![-1.0; 14], vec![0]).is_err());
    }
}
