//! End-to-end training over an HSPT-backed scene.
//!
//! Each step cuts the hierarchy for one training view, gathers the cut
//! from the in-memory upper hierarchy, the SPT cache and the store, renders,
//! back-propagates and takes one Adam step on exactly the gathered nodes.
//! SPT attributes live in the store; updated blocks go back to the cache as
//! dirty and reach the store on eviction or flush. Nodes outside SPTs live
//! in the in-memory hierarchy.

mod adam;
mod checkpoint;
mod config;
mod dataset;
mod init;
mod metrics;
#[cfg(test)]
mod tests;

pub use adam::OptimizerState;
pub use checkpoint::{
    decode_optimizer, encode_optimizer, read_optimizer, write_optimizer, CheckpointState, OPTIMIZER_FILE, OPTIMIZER_MAGIC, OPTIMIZER_VERSION,
    SCENE_FILE, STATE_FILE,
};
pub use config::{AdamConfig, LearningRates, TrainConfig};
pub use dataset::Dataset;
pub use init::{initial_model, initialize, mean_psnr, optimize_flat, InitialModel, Initialized};
pub use metrics::{DensifyMetrics, JsonLines, StepMetrics};

use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheEntry, SptCache};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;
use crate::hierarchy::{densify_spawn, respawn_dead, validate, Hierarchy, NodeId};
use crate::hspt::{cut_hspt, rebuild_after_densify, Hspt, NodeRole, Source};
use crate::render::{loss_f64, Image, RenderOptions, RenderPass};
use crate::scheduler::{build_view_graph, ViewGraph};
use crate::spt::cut_spt;
use crate::store::{AttributeBlock, SceneStore};

use adam::StepSizes;

/// Held-out quality averaged over views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub psnr: f64,
    pub loss: f64,
    pub ssim: f64,
    pub views: usize,
}

/// Where a gathered Gaussian is read from and written back to.
#[derive(Clone, Copy, Debug)]
enum Loc {
    Hierarchy,
    /// Position in a cache-resident block.
    Hit(u32, usize),
    /// Position in a block loaded this step.
    Loaded(usize, usize),
}

pub struct Trainer {
    cfg: TrainConfig,
    h: Hierarchy,
    hspt: Hspt,
    roles: Vec<NodeRole>,
    store: SceneStore,
    store_path: Option<PathBuf>,
    cache: SptCache,
    opt: OptimizerState,
    lr: StepSizes,
    extent: f64,
    views: Dataset,
    graph: Option<ViewGraph>,
    rng: ChaCha8Rng,
    current: usize,
    iteration: u64,
}

fn open_store(path: Option<&Path>, h: &Hierarchy, hspt: &Hspt) -> Result<SceneStore> {
    match path {
        Some(p) => SceneStore::create(p, h, hspt),
        None => SceneStore::in_memory(h, hspt),
    }
}

fn psnr_of(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64;
    -10.0 * mse.log10()
}

impl Trainer {
    /// Trainer over an initialized model. `views` are the training views;
    /// the working store is written to `store_path`, or kept in memory.
    pub fn new(init: Initialized, views: Dataset, cfg: TrainConfig, store_path: Option<PathBuf>) -> Result<Self> {
        Self::assemble(init.hierarchy, init.hspt, init.optimizer, init.extent, views, cfg, store_path, 0, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        h: Hierarchy,
        hspt: Hspt,
        opt: OptimizerState,
        extent: f64,
        views: Dataset,
        cfg: TrainConfig,
        store_path: Option<PathBuf>,
        iteration: u64,
        current: Option<usize>,
    ) -> Result<Self> {
        cfg.validate()?;
        if views.is_empty() {
            return Err(Error::InvalidDataset("training needs at least one view".into()));
        }
        let sh_len = h.node(h.root()).sh_rest.len();
        if opt.len() != h.len() || opt.width() != 14 + sh_len {
            return Err(Error::InvalidInput(format!(
                "optimizer has {} slots of width {}, scene has {} slots of width {}",
                opt.len(),
                opt.width(),
                h.len(),
                14 + sh_len
            )));
        }
        let store = open_store(store_path.as_deref(), &h, &hspt)?;
        let graph = if cfg.use_scheduler && views.len() >= 2 {
            let pos: Vec<[f64; 3]> = views.cameras.iter().map(|c| c.position).collect();
            Some(build_view_graph(&pos, &cfg.scheduler)?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let current = current.unwrap_or_else(|| rng.random_range(0..views.len()));
        if current >= views.len() {
            return Err(Error::InvalidInput(format!("current view {current} out of range")));
        }
        Ok(Self {
            roles: hspt.node_roles(&h),
            cache: SptCache::new(cfg.cache)?,
            lr: StepSizes::new(&cfg.adam, extent, sh_len),
            cfg,
            h,
            hspt,
            store,
            store_path,
            opt,
            extent,
            views,
            graph,
            rng,
            current,
            iteration,
        })
    }

    /// Continues from a checkpoint directory. The random stream restarts
    /// from the configured seed.
    pub fn resume(dir: impl AsRef<Path>, views: Dataset, cfg: TrainConfig, store_path: Option<PathBuf>) -> Result<Self> {
        let dir = dir.as_ref();
        let scene = SceneStore::open(dir.join(SCENE_FILE))?;
        let h = scene.read_hierarchy()?;
        let hspt = scene.read_hspt(&h)?;
        let (opt, iteration) = read_optimizer(dir.join(OPTIMIZER_FILE))?;
        let state_path = dir.join(STATE_FILE);
        let text = std::fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: CheckpointState = serde_json::from_str(&text)?;
        if state.iteration != iteration {
            return Err(Error::InvalidInput(format!(
                "state iteration {} differs from optimizer iteration {iteration}",
                state.iteration
            )));
        }
        Self::assemble(h, hspt, opt, state.extent, views, cfg, store_path, iteration, Some(state.current_view))
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// In-memory hierarchy. SPT nodes may be stale here; see [`Self::snapshot`].
    pub fn hierarchy(&self) -> &Hierarchy {
        &self.h
    }

    pub fn hspt(&self) -> &Hspt {
        &self.hspt
    }

    pub fn store(&self) -> &SceneStore {
        &self.store
    }

    pub fn cache(&self) -> &SptCache {
        &self.cache
    }

    /// Mutable cache access, for pre-warming.
    pub fn cache_mut(&mut self) -> &mut SptCache {
        &mut self.cache
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn views(&self) -> &Dataset {
        &self.views
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn current_view(&self) -> usize {
        self.current
    }

    /// Draws the next training view and makes it current.
    pub fn next_view(&mut self) -> usize {
        let next = match &self.graph {
            Some(g) => g.next_view(self.current, self.iteration + 1, &mut self.rng),
            None => self.rng.random_range(0..self.views.len()),
        };
        self.current = next;
        next
    }

    /// One iteration on the next scheduled view.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let v = self.next_view();
        self.step_on(v)
    }

    /// One iteration on training view `view`.
    pub fn step_on(&mut self, view: usize) -> Result<StepMetrics> {
        if view >= self.views.len() {
            return Err(Error::InvalidInput(format!("view {view} out of range")));
        }
        let it = self.iteration + 1;
        let cam = self.views.cameras[view].clone();
        let read0 = self.store.bytes_read();
        let written0 = self.store.bytes_written();
        let set = cut_hspt(&self.hspt, &self.h, &cam, self.cfg.cull);

        let mut items: Vec<(NodeId, Loc)> = Vec::with_capacity(set.len());
        for (&n, &src) in set.nodes.iter().zip(&set.sources) {
            if src != Source::Spt {
                items.push((n, Loc::Hierarchy));
            }
        }
        let mut loaded: Vec<(AttributeBlock, f64)> = Vec::new();
        let (mut hits, mut misses, mut records) = (0, 0, 0);
        for sel in &set.per_spt {
            let id = sel.spt_id;
            if self.cfg.use_cache {
                if let Some(e) = self.cache.lookup(id, sel.d_root) {
                    // Reused verbatim: the selection the block was cut for.
                    hits += 1;
                    for &p in &cut_spt(&self.hspt.spts[id as usize], e.cached_distance).positions {
                        items.push((e.block.nodes[p as usize], Loc::Hit(id, p as usize)));
                    }
                    continue;
                }
                if let Some(stale) = self.cache.remove(id) {
                    if stale.dirty {
                        self.store.write_back(&stale.block)?;
                    }
                }
            }
            misses += 1;
            if sel.prefix_len == 0 {
                continue;
            }
            let block = self.store.load_spt_prefix(id, sel.prefix_len)?;
            records += sel.prefix_len;
            let b = loaded.len();
            for &p in &sel.positions {
                items.push((block.nodes[p as usize], Loc::Loaded(b, p as usize)));
            }
            loaded.push((block, sel.d_root));
        }
        items.sort_unstable_by_key(|&(n, _)| n);

        let mut gs: Vec<GaussianAttributes> = items
            .iter()
            .map(|&(n, loc)| match loc {
                Loc::Hierarchy => self.h.node(n).clone(),
                Loc::Hit(id, p) => self.cache.peek(id).expect("hit stays resident").block.gaussian(p),
                Loc::Loaded(b, p) => loaded[b].0.gaussian(p),
            })
            .collect();
        let pass = RenderPass::new(&gs, &cam, &RenderOptions::default())?;
        let target = self.views.images[view].to_f64();
        let lv = loss_f64(pass.pixels(), &target, cam.width(), cam.height(), self.cfg.loss_lambda)?;
        if !lv.value.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                reason: format!("loss {} on view {view} with {} Gaussians", lv.value, gs.len()),
            });
        }
        let grads = pass.backward(&lv.grad)?;

        for (k, &(n, loc)) in items.iter().enumerate() {
            let g = &mut gs[k];
            self.opt.step(n, g, &grads, k, &self.cfg.adam, &self.lr);
            match loc {
                Loc::Hierarchy => *self.h.node_mut(n) = g.clone(),
                Loc::Hit(id, p) => {
                    let e = self.cache.get_mut(id).expect("hit stays resident");
                    e.block.set(p, g);
                    e.dirty = true;
                }
                Loc::Loaded(b, p) => loaded[b].0.set(p, g),
            }
        }
        // Cached entries are already updated, so evicting them is safe.
        for (block, d_root) in loaded {
            if self.cfg.use_cache && block.bytes() <= self.cache.config().budget_bytes {
                for (_, ev) in self.cache.insert(CacheEntry::new(block, d_root, true))? {
                    self.store.write_back(&ev)?;
                }
            } else {
                self.store.write_back(&block)?;
            }
        }
        if self.cfg.use_cache {
            for (_, ev) in self.cache.tick_and_maybe_flush(it) {
                self.store.write_back(&ev)?;
            }
        }
        self.iteration = it;
        Ok(StepMetrics {
            iteration: it,
            view,
            loss: lv.value,
            l1: lv.l1,
            ssim: lv.ssim,
            psnr: psnr_of(pass.pixels(), &target),
            gaussians_rendered: gs.len(),
            gaussians_loaded_from_store: records,
            cache_hits: hits,
            cache_misses: misses,
            bytes_streamed: self.store.bytes_read() - read0,
            bytes_written: self.store.bytes_written() - written0,
            densify: None,
        })
    }

    /// Steps until `total_iterations`, densifying on schedule. `on_step`
    /// sees every record after its densification.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>) -> Result<()> {
        while self.iteration < self.cfg.total_iterations {
            let mut m = self.step()?;
            if self.cfg.densifies_at(m.iteration) {
                m.densify = Some(self.densify()?);
            }
            on_step(self, &m)?;
        }
        Ok(())
    }

    /// Writes every dirty cache block back and empties the cache.
    pub fn flush_cache(&mut self) -> Result<()> {
        for (_, b) in self.cache.flush() {
            self.store.write_back(&b)?;
        }
        Ok(())
    }

    /// Current attributes of every node slot: cache over store for SPT
    /// nodes, the in-memory hierarchy for the rest. Free slots are default.
    pub fn snapshot(&self) -> Result<Vec<GaussianAttributes>> {
        let stored = self.store.read_hierarchy()?;
        let mut out: Vec<GaussianAttributes> = stored.nodes().to_vec();
        for (n, role) in self.roles.iter().enumerate() {
            if !matches!(role, NodeRole::Spt(_) | NodeRole::Free) {
                out[n] = self.h.node(n as NodeId).clone();
            }
        }
        for id in self.cache.resident() {
            let b = &self.cache.peek(id).unwrap().block;
            for (i, &n) in b.nodes.iter().enumerate() {
                out[n as usize] = b.gaussian(i);
            }
        }
        Ok(out)
    }

    /// Hierarchy with current attributes everywhere.
    pub fn current_hierarchy(&self) -> Result<Hierarchy> {
        let snap = self.snapshot()?;
        let mut h = self.h.clone();
        for (n, g) in snap.into_iter().enumerate() {
            if !h.is_free(n as NodeId) {
                *h.node_mut(n as NodeId) = g;
            }
        }
        Ok(h)
    }

    /// Flushes the cache and copies SPT attributes from the store into the
    /// in-memory hierarchy.
    fn sync(&mut self) -> Result<()> {
        self.flush_cache()?;
        let stored = self.store.read_hierarchy()?;
        for (n, role) in self.roles.iter().enumerate() {
            if matches!(role, NodeRole::Spt(_)) {
                *self.h.node_mut(n as NodeId) = stored.node(n as NodeId).clone();
            }
        }
        Ok(())
    }

    /// Respawns dead leaves, spawns new ones, rebuilds the HSPT and
    /// rewrites the store.
    pub fn densify(&mut self) -> Result<DensifyMetrics> {
        self.sync()?;
        let thr = self.cfg.dead_opacity_threshold;
        let leaves: Vec<NodeId> = {
            let mut l: Vec<NodeId> = self.h.leaves().into_iter().filter(|&n| !self.h.in_skybox(n)).collect();
            l.sort_unstable();
            l
        };
        let (dead, alive): (Vec<NodeId>, Vec<NodeId>) = leaves.iter().partition(|&&n| self.h.node(n).opacity < thr);

        let mut out = DensifyMetrics::default();
        let mut reset: Vec<NodeId> = Vec::new();
        let weights: Vec<f64> = alive.iter().map(|&n| self.h.node(n).opacity as f64).collect();
        let pick = WeightedIndex::new(&weights).ok();
        for &d in &dead {
            let parent = self.h.parent(d);
            let mut done = false;
            if let (Some(pick), Some(p)) = (&pick, parent) {
                // Targets that stopped being leaves are redrawn.
                for _ in 0..64 {
                    let t = alive[pick.sample(&mut self.rng)];
                    if !self.h.is_leaf(t) {
                        continue;
                    }
                    if respawn_dead(&mut self.h, d, t, &self.cfg.split, &mut self.rng).is_ok() {
                        reset.extend([d, p]);
                        done = true;
                    }
                    break;
                }
            }
            if done {
                out.respawned += 1;
            } else {
                out.respawn_skipped += 1;
            }
        }

        let candidates: Vec<NodeId> = {
            let mut l: Vec<NodeId> = self.h.leaves().into_iter().filter(|&n| !self.h.in_skybox(n)).collect();
            l.sort_unstable();
            l
        };
        let k = self.cfg.spawns_for(candidates.len()).min(candidates.len());
        if k > 0 {
            let w = |i: usize| self.h.node(candidates[i]).opacity.max(0.0) as f64;
            let positive = (0..candidates.len()).filter(|&i| w(i) > 0.0).count();
            if let Ok(chosen) = rand::seq::index::sample_weighted(&mut self.rng, candidates.len(), w, k.min(positive)) {
                let mut chosen = chosen.into_vec();
                chosen.sort_unstable();
                for i in chosen {
                    let (a, b) = densify_spawn(&mut self.h, candidates[i], &self.cfg.split, &mut self.rng)?;
                    reset.extend([a, b]);
                    out.spawned += 1;
                }
            }
        }

        self.opt.resize(self.h.len());
        for n in reset {
            self.opt.reset(n);
        }
        self.hspt = rebuild_after_densify(&self.hspt, &self.h)?;
        self.roles = self.hspt.node_roles(&self.h);
        self.store = open_store(self.store_path.as_deref(), &self.h, &self.hspt)?;
        self.cache = SptCache::new(self.cfg.cache)?;

        let diag = validate(&self.h, &self.hspt.lod);
        out.leaves = self.h.leaf_count();
        out.nodes = self.h.live_count();
        out.spts = self.hspt.spts.len();
        out.structural_violations = diag.structural_violations();
        out.monotonicity_violations = diag.monotonicity_violations;
        Ok(out)
    }

    /// Renders the current model's cut for `cam`.
    pub fn render_view(&self, cam: &Camera) -> Result<Image> {
        let snap = self.snapshot()?;
        Ok(self.render_cut(&snap, cam)?.image())
    }

    fn render_cut(&self, snap: &[GaussianAttributes], cam: &Camera) -> Result<RenderPass> {
        let mut nodes = cut_hspt(&self.hspt, &self.h, cam, self.cfg.cull).nodes;
        nodes.sort_unstable();
        let gs: Vec<GaussianAttributes> = nodes.iter().map(|&n| snap[n as usize].clone()).collect();
        RenderPass::new(&gs, cam, &RenderOptions::default())
    }

    /// Mean PSNR, loss and SSIM of the current model's cuts over `views`.
    pub fn evaluate(&self, views: &Dataset) -> Result<EvalMetrics> {
        if views.is_empty() {
            return Err(Error::InvalidDataset("no views to evaluate".into()));
        }
        let snap = self.snapshot()?;
        let mut m = EvalMetrics {
            views: views.len(),
            ..Default::default()
        };
        for (cam, img) in views.cameras.iter().zip(&views.images) {
            let pass = self.render_cut(&snap, cam)?;
            let target = img.to_f64();
            let lv = loss_f64(pass.pixels(), &target, cam.width(), cam.height(), self.cfg.loss_lambda)?;
            m.psnr += psnr_of(pass.pixels(), &target);
            m.loss += lv.value;
            m.ssim += lv.ssim;
        }
        let n = views.len() as f64;
        m.psnr /= n;
        m.loss /= n;
        m.ssim /= n;
        Ok(m)
    }

    /// Writes scene, optimizer sidecar and loop state into `dir` without
    /// disturbing the cache.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        SceneStore::write(dir.join(SCENE_FILE), &self.current_hierarchy()?, &self.hspt)?;
        write_optimizer(dir.join(OPTIMIZER_FILE), &self.opt, self.iteration)?;
        let state = CheckpointState {
            iteration: self.iteration,
            current_view: self.current,
            extent: self.extent,
        };
        let path = dir.join(STATE_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&state)?).map_err(|e| Error::io(&path, e))
    }
}
