use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use glod_core::store::{read_ply, PlyPoint};
use glod_core::train::{initial_model, initialize, mean_psnr, Dataset, JsonLines, TrainConfig, Trainer};
use glod_core::SceneStore;
use serde::{Deserialize, Serialize};

use super::{is_ply, write_json};

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    /// Point cloud (PLY) or scene file whose scene leaves seed the model.
    pub input: PathBuf,
    pub views: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub iterations: Option<u64>,
    pub seed: Option<u64>,
    /// Every k-th view is held out for evaluation; 0 evaluates on the
    /// training views.
    pub held_out_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: u64,
    pub train_views: usize,
    pub eval_views: usize,
    /// Initial model before any optimization, as flat leaves. Absent when
    /// resuming.
    pub init_psnr: Option<f64>,
    /// Hierarchy cuts right after initialization or at the resumed state.
    pub start_psnr: f64,
    pub final_psnr: f64,
    pub final_ssim: f64,
    pub leaves: usize,
    pub nodes: usize,
    pub spts: usize,
    pub seconds: f64,
}

fn load_points(path: &Path) -> Result<Vec<PlyPoint>> {
    if is_ply(path)? {
        return Ok(read_ply(path)?);
    }
    let store = SceneStore::open(path).with_context(|| format!("opening scene {}", path.display()))?;
    let h = store.read_hierarchy()?;
    let mut leaves = h.leaves();
    leaves.sort_unstable();
    Ok(leaves
        .into_iter()
        .filter(|&n| !h.in_skybox(n))
        .map(|n| {
            let g = h.node(n);
            PlyPoint {
                position: g.mean,
                color: Some(g.base_color),
            }
        })
        .collect())
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Writes `metrics.jsonl`, `summary.json`, periodic checkpoints under
/// `checkpoints/iter_NNNNNN` and the last state under `final`.
pub fn train(a: &TrainArgs) -> Result<TrainSummary> {
    let t0 = Instant::now();
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.total_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let all = Dataset::load_dir(&a.views).with_context(|| format!("loading views from {}", a.views.display()))?;
    if all.is_empty() {
        bail!("no views found in {}", a.views.display());
    }
    let (train, eval) = if a.held_out_every > 1 && all.len() >= a.held_out_every {
        all.split(a.held_out_every)
    } else {
        (all.clone(), all)
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let store_path = Some(a.out.join("work.glod"));

    let (mut trainer, init_psnr) = match &a.resume {
        Some(dir) => (Trainer::resume(dir, train.clone(), cfg.clone(), store_path)?, None),
        None => {
            let points = load_points(&a.input)?;
            let init_psnr = mean_psnr(&initial_model(&points, &cfg)?.all(), &eval)?;
            let init = initialize(&points, &train, &cfg)?;
            (Trainer::new(init, train.clone(), cfg.clone(), store_path)?, Some(init_psnr))
        }
    };
    let start = trainer.evaluate(&eval)?;

    let file = File::create(a.out.join("metrics.jsonl")).context("creating metrics.jsonl")?;
    let mut sink = JsonLines::new(BufWriter::new(file));
    let every = a.checkpoint_every;
    let ckpt_root = a.out.join("checkpoints");
    trainer.run(|t, m| {
        sink.write(m)?;
        if every > 0 && m.iteration % every == 0 {
            t.save_checkpoint(ckpt_root.join(format!("iter_{:06}", m.iteration)))?;
        }
        Ok(())
    })?;
    sink.flush()?;
    trainer.save_checkpoint(a.out.join("final"))?;
    let end = trainer.evaluate(&eval)?;
    let h = trainer.hierarchy();
    let summary = TrainSummary {
        iterations: trainer.iteration(),
        train_views: train.len(),
        eval_views: eval.len(),
        init_psnr,
        start_psnr: start.psnr,
        final_psnr: end.psnr,
        final_ssim: end.ssim,
        leaves: h.leaf_count(),
        nodes: h.live_count(),
        spts: trainer.hspt().spts.len(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    Ok(summary)
}
