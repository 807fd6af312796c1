//! Spatially coherent training-view scheduling.
//!
//! Views are linked to their `k` nearest neighbors by camera position.
//! Consecutive views are drawn from the current view's neighbors with
//! probability proportional to `1 / (w_ij + W)`, so nearby views are
//! favored but never exclusive; every `random_every` iterations a uniformly
//! random view is injected and becomes the new current view.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub k: usize,
    /// Exploration constant; `None` uses the mean nearest-neighbor distance.
    pub w: Option<f64>,
    pub random_every: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            k: 16,
            w: None,
            random_every: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGraph {
    pub positions: Vec<[f64; 3]>,
    /// Per view: `(neighbor, distance)` ascending by distance, then index.
    pub neighbors: Vec<Vec<(u32, f64)>>,
    pub k: usize,
    pub w: f64,
    pub random_every: u64,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Exact kNN graph over view positions.
pub fn build_view_graph(positions: &[[f64; 3]], cfg: &SchedulerConfig) -> Result<ViewGraph> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::DegenerateGraph(n));
    }
    if cfg.k == 0 || cfg.random_every == 0 {
        return Err(Error::InvalidParameter("k and random_every must be at least 1".into()));
    }
    let k = cfg.k.min(n - 1);
    let neighbors: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut all: Vec<(u32, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j as u32, dist(&positions[i], &positions[j])))
                .collect();
            let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, cmp);
                all.truncate(k);
            }
            all.sort_by(cmp);
            all
        })
        .collect();
    let w = match cfg.w {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::InvalidParameter(format!("exploration constant must be positive, got {w}"))),
        None => {
            let mean = neighbors.iter().map(|l| l[0].1).sum::<f64>() / n as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    Ok(ViewGraph {
        positions: positions.to_vec(),
        neighbors,
        k,
        w,
        random_every: cfg.random_every,
    })
}

impl ViewGraph {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Transition probabilities out of `current` on non-injection steps.
    pub fn probabilities(&self, current: usize) -> Vec<(u32, f64)> {
        let list = &self.neighbors[current];
        let total: f64 = list.iter().map(|&(_, w)| 1.0 / (w + self.w)).sum();
        list.iter().map(|&(j, w)| (j, 1.0 / (w + self.w) / total)).collect()
    }

    /// Next training view after `current` at `iteration`.
    pub fn next_view<R: Rng + ?Sized>(&self, current: usize, iteration: u64, rng: &mut R) -> usize {
        if iteration.is_multiple_of(self.random_every) {
            return rng.random_range(0..self.len());
        }
        let list = &self.neighbors[current];
        let weights: Vec<f64> = list.iter().map(|&(_, w)| 1.0 / (w + self.w)).collect();
        let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return list[i].0 as usize;
            }
            u -= w;
        }
        list[list.len() - 1].0 as usize
    }
}
