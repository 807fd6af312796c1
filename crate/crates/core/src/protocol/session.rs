//! Server-side cut diffing and the client-side resident set it maintains.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;

use crate::cache::{CacheConfig, CacheEntry, SptCache};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeId};
use crate::hspt::{cut_hspt, Hspt, Source};
use crate::store::{AttributeBlock, SceneStore};

use super::wire::{CameraPose, Message, Stats, WireAttributes};

pub const PROTOCOL_VERSION: u32 = 1;

/// Greeting sent when a session opens: a Stats frame with `cut_ms = -1`
/// whose `rendered` field holds the protocol version.
pub fn hello() -> Message {
    Message::Stats(Stats {
        rendered: PROTOCOL_VERSION,
        loaded: 0,
        bytes: 0,
        cut_ms: -1.0,
    })
}

/// Read-only scene shared by all sessions. Topology and non-SPT attributes
/// are held in memory; SPT prefixes are read from the store, optionally
/// through a per-session cache.
pub struct ServeScene {
    pub store: SceneStore,
    pub hierarchy: Hierarchy,
    pub hspt: Hspt,
    pub cull: bool,
    pub cache: Option<CacheConfig>,
}

impl ServeScene {
    pub fn new(store: SceneStore) -> Result<Self> {
        let hierarchy = store.read_hierarchy()?;
        let hspt = store.read_hspt(&hierarchy)?;
        Ok(Self {
            store,
            hierarchy,
            hspt,
            cull: true,
            cache: None,
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(SceneStore::open(path)?)
    }
}

/// What the server believes the client holds.
pub struct ServeSession<'a> {
    scene: &'a ServeScene,
    resident: BTreeMap<u32, usize>,
    upper: Option<Vec<NodeId>>,
    cache: Option<SptCache>,
    timing: bool,
}

impl<'a> ServeSession<'a> {
    /// With `timing` off, `cut_ms` is reported as 0 so streams are
    /// reproducible byte for byte.
    pub fn new(scene: &'a ServeScene, timing: bool) -> Result<Self> {
        Ok(Self {
            scene,
            resident: BTreeMap::new(),
            upper: None,
            cache: scene.cache.map(SptCache::new).transpose()?,
            timing,
        })
    }

    pub fn cache(&self) -> Option<&SptCache> {
        self.cache.as_ref()
    }

    /// First `len` records of an SPT. A cached block is used only when it
    /// covers the whole prefix, so what is sent never depends on the cache.
    fn fetch(&mut self, id: u32, len: usize, d_root: f64) -> Result<AttributeBlock> {
        let store = &self.scene.store;
        let Some(cache) = self.cache.as_mut() else {
            return store.load_spt_prefix(id, len);
        };
        if let Some(e) = cache.lookup(id, d_root) {
            if e.block.len() >= len {
                return Ok(e.block.clone());
            }
        }
        cache.remove(id);
        let block = store.load_spt_prefix(id, len)?;
        if block.bytes() <= cache.config().budget_bytes {
            cache.insert(CacheEntry::new(block.clone(), d_root, false))?;
        }
        Ok(block)
    }

    /// Resident SPTs and their prefix lengths.
    pub fn resident(&self) -> &BTreeMap<u32, usize> {
        &self.resident
    }

    /// Messages that bring the client from its current state to the cut for
    /// `pose`: UpperSet if the non-SPT nodes changed, evictions, loads, then
    /// one Stats frame.
    pub fn handle_pose(&mut self, pose: &CameraPose) -> Result<Vec<Message>> {
        let cam = pose.to_camera();
        cam.validate().map_err(|e| Error::Protocol(format!("invalid camera pose: {e}")))?;
        let s = self.scene;
        let t0 = Instant::now();
        let set = cut_hspt(&s.hspt, &s.hierarchy, &cam, s.cull);
        let cut_ms = if self.timing { t0.elapsed().as_secs_f32() * 1e3 } else { 0.0 };

        let upper: Vec<NodeId> = set
            .nodes
            .iter()
            .zip(&set.sources)
            .filter(|(_, src)| **src != Source::Spt)
            .map(|(n, _)| *n)
            .collect();
        let want: BTreeMap<u32, (usize, f64)> = set
            .per_spt
            .iter()
            .filter(|x| x.prefix_len > 0)
            .map(|x| (x.spt_id, (x.prefix_len, x.d_root)))
            .collect();

        let mut out = Vec::new();
        let mut loaded = 0usize;
        if self.upper.as_ref() != Some(&upper) {
            let attrs = WireAttributes::from_gaussians(upper.iter().map(|&n| s.hierarchy.node(n)));
            loaded += attrs.len();
            out.push(Message::UpperSet(attrs));
            self.upper = Some(upper);
        }
        let gone: Vec<u32> = self.resident.keys().filter(|id| !want.contains_key(id)).copied().collect();
        for id in gone {
            self.resident.remove(&id);
            out.push(Message::SptEvict(id));
        }
        for (&id, &(p, d_root)) in &want {
            if self.resident.get(&id) == Some(&p) {
                continue;
            }
            let block = self.fetch(id, p, d_root)?;
            let spt = &s.hspt.spts[id as usize];
            let keys = spt.records[..p].iter().map(|r| r.key_self).collect();
            let mut attrs = WireAttributes::default();
            for i in 0..p {
                attrs.push(&block.gaussian(i));
            }
            loaded += p;
            out.push(Message::SptLoad {
                spt_id: id,
                center: spt.root_center,
                keys,
                attrs,
            });
            self.resident.insert(id, p);
        }
        let bytes = out.iter().map(|m| m.frame_len() as u64).sum();
        out.push(Message::Stats(Stats {
            rendered: set.len() as u32,
            loaded: loaded as u32,
            bytes,
            cut_ms,
        }));
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidentSpt {
    pub center: [f32; 3],
    pub keys: Vec<f32>,
    pub attrs: WireAttributes,
}

/// Running sums over per-pose Stats frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HudTotals {
    pub poses: u64,
    pub rendered: u64,
    pub loaded: u64,
    pub bytes: u64,
    pub cut_ms: f64,
}

/// Client-side mirror of the server's cut.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidentSet {
    /// Per SPT: root center, prefix keys, prefix attributes.
    pub spts: BTreeMap<u32, ResidentSpt>,
    pub upper: WireAttributes,
    /// Bumped by every state-changing message.
    pub generation: u64,
    /// Tolerated oddities, such as evicting an unknown SPT.
    pub warnings: u64,
    pub protocol_version: Option<u32>,
    pub hud: HudTotals,
    pub last_stats: Option<Stats>,
}

impl ResidentSet {
    pub fn apply(&mut self, m: &Message) -> Result<()> {
        match m {
            Message::SptLoad { spt_id, center, keys, attrs } => {
                if keys.len() != attrs.len() {
                    return Err(Error::Protocol(format!(
                        "SptLoad {spt_id}: {} keys for {} records",
                        keys.len(),
                        attrs.len()
                    )));
                }
                self.spts.insert(
                    *spt_id,
                    ResidentSpt {
                        center: *center,
                        keys: keys.clone(),
                        attrs: attrs.clone(),
                    },
                );
                self.generation += 1;
            }
            Message::SptEvict(id) => {
                if self.spts.remove(id).is_some() {
                    self.generation += 1;
                } else {
                    self.warnings += 1;
                }
            }
            Message::UpperSet(attrs) => {
                self.upper = attrs.clone();
                self.generation += 1;
            }
            Message::Stats(s) if s.cut_ms < 0.0 && self.protocol_version.is_none() => {
                self.protocol_version = Some(s.rendered);
            }
            Message::Stats(s) => {
                self.hud.poses += 1;
                self.hud.rendered += s.rendered as u64;
                self.hud.loaded += s.loaded as u64;
                self.hud.bytes += s.bytes;
                self.hud.cut_ms += s.cut_ms as f64;
                self.last_stats = Some(*s);
            }
            Message::CameraPose(_) => return Err(Error::Protocol("client received a camera pose".into())),
            Message::Error { code, message } => return Err(Error::Protocol(format!("server error {code}: {message}"))),
        }
        Ok(())
    }

    /// Total resident records.
    pub fn resident_records(&self) -> usize {
        self.upper.len() + self.spts.values().map(|s| s.keys.len()).sum::<usize>()
    }

    /// Gaussians to draw for `pose`: the upper set, then per SPT in id order
    /// the prefix records with `key_self <= d_root`.
    pub fn visible(&self, pose: &CameraPose) -> WireAttributes {
        let p = Vector3::from(pose.position.map(f64::from));
        let mut out = self.upper.clone();
        for s in self.spts.values() {
            let d = (Vector3::from(s.center.map(f64::from)) - p).norm();
            for (i, &k) in s.keys.iter().enumerate() {
                if k as f64 <= d {
                    out.push(&s.attrs.gaussian(i));
                }
            }
        }
        out
    }
}
