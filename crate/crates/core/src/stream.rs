//! Per-frame cut, gather and render over a scene store.
//!
//! Each frame cuts the HSPT, takes non-SPT nodes from the resident
//! hierarchy and SPT prefixes from the cache or the store. Rendering never
//! writes, so cached blocks are always clean and a hit renders exactly the
//! selection the block was cut for.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, CacheEntry, SptCache};
use crate::camera::Camera;
use crate::error::Result;
use crate::gaussian::GaussianAttributes;
use crate::hierarchy::{bfs_cut_subtree, Hierarchy};
use crate::hspt::{cut_hspt, Hspt, RenderSet, Source};
use crate::render::{Image, RenderOptions, RenderPass};
use crate::spt::cut_spt;
use crate::store::SceneStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub cull: bool,
    pub use_cache: bool,
    pub cache: CacheConfig,
    /// Also time a full-hierarchy BFS cut and diff it against the HSPT cut.
    pub bfs_oracle: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            cull: true,
            use_cache: true,
            cache: CacheConfig::default(),
            bfs_oracle: false,
        }
    }
}

/// BFS cut timing and its disagreement with the HSPT cut, skybox excluded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub bfs_ms: f64,
    pub bfs_len: usize,
    /// Size of the symmetric difference between both node sets.
    pub mismatched: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: usize,
    pub cut_ms: f64,
    pub gather_ms: f64,
    /// Zero when the frame was gathered but not rendered.
    pub render_ms: f64,
    pub frame_ms: f64,
    pub rendered: usize,
    /// SPT records read from the store.
    pub loaded: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub bytes_streamed: u64,
    pub oracle: Option<OracleStats>,
}

pub struct Streamer<'a> {
    store: &'a SceneStore,
    h: Hierarchy,
    hspt: Hspt,
    cache: Option<SptCache>,
    cfg: StreamConfig,
    frame: usize,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl<'a> Streamer<'a> {
    pub fn new(store: &'a SceneStore, cfg: StreamConfig) -> Result<Self> {
        let h = store.read_hierarchy()?;
        let hspt = store.read_hspt(&h)?;
        let cache = if cfg.use_cache { Some(SptCache::new(cfg.cache)?) } else { None };
        Ok(Self {
            store,
            h,
            hspt,
            cache,
            cfg,
            frame: 0,
        })
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.h
    }

    pub fn hspt(&self) -> &Hspt {
        &self.hspt
    }

    pub fn cache(&self) -> Option<&SptCache> {
        self.cache.as_ref()
    }

    /// Cuts and gathers one frame; Gaussians come back in node-id order.
    pub fn gather(&mut self, cam: &Camera) -> Result<(Vec<GaussianAttributes>, FrameStats)> {
        let t0 = Instant::now();
        let read0 = self.store.bytes_read();
        let set = cut_hspt(&self.hspt, &self.h, cam, self.cfg.cull);
        let cut_ms = ms(t0);
        let oracle = self.cfg.bfs_oracle.then(|| self.oracle(cam, &set));

        let t1 = Instant::now();
        let mut items: Vec<(u32, GaussianAttributes)> = Vec::with_capacity(set.len());
        for (&n, &src) in set.nodes.iter().zip(&set.sources) {
            if src != Source::Spt {
                items.push((n, self.h.node(n).clone()));
            }
        }
        let (mut hits, mut misses, mut loaded) = (0, 0, 0);
        for sel in &set.per_spt {
            let spt = &self.hspt.spts[sel.spt_id as usize];
            if let Some(cache) = self.cache.as_mut() {
                if let Some(e) = cache.lookup(sel.spt_id, sel.d_root) {
                    hits += 1;
                    for &p in &cut_spt(spt, e.cached_distance).positions {
                        items.push((e.block.nodes[p as usize], e.block.gaussian(p as usize)));
                    }
                    continue;
                }
                cache.remove(sel.spt_id);
            }
            misses += 1;
            if sel.prefix_len == 0 {
                continue;
            }
            let block = self.store.load_spt_prefix(sel.spt_id, sel.prefix_len)?;
            loaded += sel.prefix_len;
            for &p in &sel.positions {
                items.push((block.nodes[p as usize], block.gaussian(p as usize)));
            }
            if let Some(cache) = self.cache.as_mut() {
                if block.bytes() <= cache.config().budget_bytes {
                    // Clean entries evict without write-back.
                    cache.insert(CacheEntry::new(block, sel.d_root, false))?;
                }
            }
        }
        items.sort_unstable_by_key(|&(n, _)| n);
        let gather_ms = ms(t1);
        self.frame += 1;
        let stats = FrameStats {
            frame: self.frame - 1,
            cut_ms,
            gather_ms,
            render_ms: 0.0,
            frame_ms: cut_ms + gather_ms,
            rendered: items.len(),
            loaded,
            cache_hits: hits,
            cache_misses: misses,
            bytes_streamed: self.store.bytes_read() - read0,
            oracle,
        };
        Ok((items.into_iter().map(|(_, g)| g).collect(), stats))
    }

    /// [`Self::gather`] followed by a forward render.
    pub fn render(&mut self, cam: &Camera) -> Result<(Image, FrameStats)> {
        let (gs, mut stats) = self.gather(cam)?;
        let t = Instant::now();
        let img = RenderPass::new(&gs, cam, &RenderOptions::default())?.image();
        stats.render_ms = ms(t);
        stats.frame_ms += stats.render_ms;
        Ok((img, stats))
    }

    fn oracle(&self, cam: &Camera, set: &RenderSet) -> OracleStats {
        let frustum = self.cfg.cull.then(|| cam.frustum());
        let t = Instant::now();
        let bfs = bfs_cut_subtree(&self.h, self.h.scene_root(), cam, &self.hspt.lod, frustum.as_ref());
        let bfs_ms = ms(t);
        let ours: BTreeSet<u32> = set
            .nodes
            .iter()
            .zip(&set.sources)
            .filter(|(_, s)| **s != Source::Skybox)
            .map(|(&n, _)| n)
            .collect();
        let theirs: BTreeSet<u32> = bfs.node_ids.iter().copied().collect();
        OracleStats {
            bfs_ms,
            bfs_len: bfs.len(),
            mismatched: ours.symmetric_difference(&theirs).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_hierarchy;
    use crate::hspt::{build_hspt, default_size_threshold};
    use crate::lod::LodConfig;
    use crate::synthetic::{looping_path, random_leaves};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(seed: u64, n: usize) -> SceneStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = build_hierarchy(random_leaves(&mut rng, n, 10.0)).unwrap();
        let hspt = build_hspt(&h, default_size_threshold(&h) * 8.0, 16, &LodConfig::default()).unwrap();
        SceneStore::in_memory(&h, &hspt).unwrap()
    }

    #[test]
    fn uncached_frames_match_the_cut() {
        let s = store(1, 3000);
        let mut st = Streamer::new(
            &s,
            StreamConfig {
                use_cache: false,
                ..Default::default()
            },
        )
        .unwrap();
        for cam in looping_path([0.0; 3], 12.0, 3.0, 10, [64, 48]) {
            let set = cut_hspt(st.hspt(), st.hierarchy(), &cam, true);
            let (gs, f) = st.gather(&cam).unwrap();
            let mut ids = set.nodes.clone();
            ids.sort_unstable();
            let want: Vec<_> = ids.iter().map(|&n| st.hierarchy().node(n).clone()).collect();
            assert_eq!(gs, want);
            assert_eq!(f.loaded, set.per_spt.iter().map(|s| s.prefix_len).sum::<usize>());
            assert_eq!(f.cache_hits, 0);
        }
    }

    #[test]
    fn cache_cuts_streamed_bytes_on_a_loop() {
        let s = store(2, 3000);
        let path = looping_path([0.0; 3], 12.0, 3.0, 60, [64, 48]);
        let total = |use_cache| {
            let mut st = Streamer::new(
                &s,
                StreamConfig {
                    use_cache,
                    ..Default::default()
                },
            )
            .unwrap();
            path.iter().map(|c| st.gather(c).unwrap().1.bytes_streamed).sum::<u64>()
        };
        let (with, without) = (total(true), total(false));
        assert!(without > 0 && with < without, "{with} vs {without}");
    }

    #[test]
    fn oracle_agrees_outside_spts() {
        let s = store(3, 2000);
        let mut st = Streamer::new(
            &s,
            StreamConfig {
                bfs_oracle: true,
                cull: false,
                ..Default::default()
            },
        )
        .unwrap();
        let (_, f) = st.render(&looping_path([0.0; 3], 40.0, 3.0, 1, [32, 24])[0]).unwrap();
        let o = f.oracle.unwrap();
        assert!(o.bfs_len > 0);
        assert!(f.render_ms > 0.0 && f.frame_ms >= f.render_ms);
    }
}
