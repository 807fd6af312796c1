use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use glod_core::stream::{FrameStats, StreamConfig, Streamer};
use glod_core::{CacheConfig, Camera, SceneStore};

use super::{read_camera_path, write_json};
use crate::report::{BenchReport, RunConfig};

#[derive(Clone, Debug)]
pub struct RenderArgs {
    pub scene: PathBuf,
    pub path: PathBuf,
    pub out: Option<PathBuf>,
    pub no_cache: bool,
    pub no_cull: bool,
    pub bfs_oracle: bool,
    pub cache: CacheConfig,
}

/// Streams one camera path. Frames are rendered when `render` is set and
/// written as `frame_NNNN.png` when `images` is given.
pub(crate) fn run_path(store: &SceneStore, cams: &[Camera], cfg: StreamConfig, render: bool, images: Option<&Path>) -> Result<Vec<FrameStats>> {
    let mut s = Streamer::new(store, cfg)?;
    let mut out = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let stats = if render {
            let (img, stats) = s.render(cam)?;
            if let Some(dir) = images {
                img.save_png(dir.join(format!("frame_{i:04}.png")))?;
            }
            stats
        } else {
            s.gather(cam)?.1
        };
        out.push(stats);
    }
    Ok(out)
}

pub fn render(a: &RenderArgs) -> Result<BenchReport> {
    let store = SceneStore::open(&a.scene).with_context(|| format!("opening scene {}", a.scene.display()))?;
    let cams = read_camera_path(&a.path)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let stream = StreamConfig {
        cull: !a.no_cull,
        use_cache: !a.no_cache,
        cache: a.cache,
        bfs_oracle: a.bfs_oracle,
    };
    let frames = run_path(&store, &cams, stream, true, a.out.as_deref())?;
    let mut report = BenchReport::default();
    report.push(
        RunConfig {
            label: "render".into(),
            scene: a.scene.display().to_string(),
            path: a.path.display().to_string(),
            resolution: cams.first().map_or([0, 0], |c| c.resolution),
            render: true,
            threads: rayon::current_num_threads(),
            stream,
        },
        vec![frames],
    );
    if let Some(dir) = &a.out {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}
