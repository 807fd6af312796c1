use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use glod_core::hierarchy::build_hierarchy;
use glod_core::hspt::{build_hspt, default_size_threshold};
use glod_core::stream::StreamConfig;
use glod_core::synthetic::{city_block, looping_path, street_path, CityBlockConfig};
use glod_core::{CacheConfig, Camera, LodConfig, SceneStore};

use super::read_camera_path;
use super::render::run_path;
use crate::report::{BenchReport, RunConfig};

pub const CONFIGS: [&str; 4] = ["full", "no-cache", "no-cull", "bfs"];

#[derive(Clone, Debug)]
pub struct BenchArgs {
    pub scene: Option<PathBuf>,
    /// Generate a city-block scene of about this many Gaussians instead.
    pub synthetic: Option<usize>,
    pub seed: u64,
    pub path: Option<PathBuf>,
    pub frames: usize,
    pub resolution: [u32; 2],
    pub repeat: usize,
    pub configs: Vec<String>,
    pub render: bool,
    pub cache: CacheConfig,
}

impl Default for BenchArgs {
    fn default() -> Self {
        Self {
            scene: None,
            synthetic: None,
            seed: 0,
            path: None,
            frames: 200,
            resolution: [160, 120],
            repeat: 1,
            configs: CONFIGS.iter().map(|s| s.to_string()).collect(),
            render: true,
            cache: CacheConfig::default(),
        }
    }
}

fn stream_config(label: &str, cache: CacheConfig) -> Result<StreamConfig> {
    let full = StreamConfig {
        cull: true,
        use_cache: true,
        cache,
        bfs_oracle: false,
    };
    Ok(match label {
        "full" => full,
        "no-cache" => StreamConfig { use_cache: false, ..full },
        "no-cull" => StreamConfig { cull: false, ..full },
        "bfs" => StreamConfig { bfs_oracle: true, ..full },
        other => bail!("unknown bench configuration {other:?}; expected one of {CONFIGS:?}"),
    })
}

/// Orbit around the leaf bounding box, at 60% of its half diagonal.
fn default_path(store: &SceneStore, frames: usize, resolution: [u32; 2]) -> Result<Vec<Camera>> {
    let h = store.read_hierarchy()?;
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for n in h.leaves() {
        if h.in_skybox(n) {
            continue;
        }
        for k in 0..3 {
            let m = h.node(n).mean[k] as f64;
            lo[k] = lo[k].min(m);
            hi[k] = hi[k].max(m);
        }
    }
    if lo[0] > hi[0] {
        bail!("scene has no leaves to orbit");
    }
    let center = std::array::from_fn(|k| (lo[k] + hi[k]) / 2.0);
    let half = (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt() / 2.0;
    let r = (0.6 * half).max(1e-3);
    Ok(looping_path(center, r, 0.2 * r, frames, resolution))
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport> {
    if a.repeat == 0 || a.frames == 0 {
        bail!("--repeat and --frames must be at least 1");
    }
    let (store, scene_label, synthetic_path) = match (&a.scene, a.synthetic) {
        (Some(p), None) => (
            SceneStore::open(p).with_context(|| format!("opening scene {}", p.display()))?,
            p.display().to_string(),
            None,
        ),
        (None, Some(n)) => {
            let cfg = CityBlockConfig {
                gaussians: n,
                ..CityBlockConfig::default()
            };
            let h = build_hierarchy(city_block(a.seed, &cfg))?;
            let hspt = build_hspt(&h, default_size_threshold(&h), 32, &LodConfig::default())?;
            let path = street_path(&cfg, a.frames, a.resolution);
            (
                SceneStore::in_memory(&h, &hspt)?,
                format!("city-block(n={n}, seed={})", a.seed),
                Some(path),
            )
        }
        _ => bail!("give exactly one of a scene file or --synthetic"),
    };
    let (cams, path_label) = match (&a.path, synthetic_path) {
        (Some(p), _) => (read_camera_path(p)?, p.display().to_string()),
        (None, Some(path)) => (path, format!("street({} frames)", a.frames)),
        (None, None) => (default_path(&store, a.frames, a.resolution)?, format!("orbit({} frames)", a.frames)),
    };
    let mut report = BenchReport::default();
    for label in &a.configs {
        let stream = stream_config(label, a.cache)?;
        let runs = (0..a.repeat)
            .map(|_| run_path(&store, &cams, stream, a.render, None))
            .collect::<Result<Vec<_>>>()?;
        report.push(
            RunConfig {
                label: label.clone(),
                scene: scene_label.clone(),
                path: path_label.clone(),
                resolution: cams.first().map_or([0, 0], |c| c.resolution),
                render: a.render,
                threads: rayon::current_num_threads(),
                stream,
            },
            runs,
        );
    }
    Ok(report)
}
