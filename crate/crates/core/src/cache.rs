//! Distance-ratio LRU write-back cache of SPT cut prefixes.
//!
//! One entry per SPT holds the attribute block of a cut prefix together with
//! the root distance it was cut for. A later view reuses the entry verbatim
//! while `d_min <= d / d̄ <= d_max`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::AttributeBlock;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub budget_bytes: u64,
    pub d_min: f64,
    pub d_max: f64,
    /// Full flush every this many iterations.
    pub flush_interval: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            budget_bytes: 256 << 20,
            d_min: 0.8,
            d_max: 1.4,
            flush_interval: 1000,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min <= 1.0 && self.d_max >= 1.0 && self.d_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distance band must satisfy 0 < d_min <= 1 <= d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.budget_bytes == 0 || self.flush_interval == 0 {
            return Err(Error::InvalidParameter("cache budget and flush interval must be positive".into()));
        }
        Ok(())
    }

    /// True if a cut made at `cached` may be reused at `d_root`.
    pub fn accepts(&self, cached: f64, d_root: f64) -> bool {
        if cached == 0.0 {
            return d_root == 0.0;
        }
        let ratio = d_root / cached;
        self.d_min <= ratio && ratio <= self.d_max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub spt_id: u32,
    pub cached_distance: f64,
    pub prefix_len: usize,
    pub block: AttributeBlock,
    pub dirty: bool,
    pub lru_stamp: u64,
}

impl CacheEntry {
    pub fn new(block: AttributeBlock, cached_distance: f64, dirty: bool) -> Self {
        Self {
            spt_id: block.spt_id,
            cached_distance,
            prefix_len: block.len(),
            block,
            dirty,
            lru_stamp: 0,
        }
    }

    pub fn bytes(&self) -> u64 {
        self.block.bytes()
    }
}

/// Dirty block handed back for write-back.
pub type Evicted = (u32, AttributeBlock);

#[derive(Clone, Debug)]
pub struct SptCache {
    cfg: CacheConfig,
    entries: HashMap<u32, CacheEntry>,
    bytes: u64,
    clock: u64,
}

impl SptCache {
    pub fn new(cfg: CacheConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            entries: HashMap::new(),
            bytes: 0,
            clock: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resident_bytes(&self) -> u64 {
        self.bytes
    }

    /// Resident SPT ids, ascending.
    pub fn resident(&self) -> Vec<u32> {
        let mut v: Vec<_> = self.entries.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, spt_id: u32) -> bool {
        self.entries.contains_key(&spt_id)
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Entry for `spt_id` if its cached distance accepts `d_root`. A hit
    /// refreshes the entry's LRU stamp.
    pub fn lookup(&mut self, spt_id: u32, d_root: f64) -> Option<&mut CacheEntry> {
        let accepted = self.entries.get(&spt_id).is_some_and(|e| self.cfg.accepts(e.cached_distance, d_root));
        if !accepted {
            return None;
        }
        let stamp = self.tick();
        let e = self.entries.get_mut(&spt_id).unwrap();
        e.lru_stamp = stamp;
        Some(e)
    }

    /// Entry without touching LRU order.
    pub fn peek(&self, spt_id: u32) -> Option<&CacheEntry> {
        self.entries.get(&spt_id)
    }

    pub fn get_mut(&mut self, spt_id: u32) -> Option<&mut CacheEntry> {
        self.entries.get_mut(&spt_id)
    }

    pub fn mark_dirty(&mut self, spt_id: u32) {
        if let Some(e) = self.entries.get_mut(&spt_id) {
            e.dirty = true;
        }
    }

    /// Makes `entry` resident as most recently used. Returns the dirty
    /// blocks of evicted or replaced entries.
    pub fn insert(&mut self, mut entry: CacheEntry) -> Result<Vec<Evicted>> {
        let size = entry.bytes();
        if size > self.cfg.budget_bytes {
            return Err(Error::OverBudget {
                bytes: size,
                budget: self.cfg.budget_bytes,
            });
        }
        let mut out = Vec::new();
        if let Some(old) = self.remove(entry.spt_id) {
            if old.dirty {
                out.push((old.spt_id, old.block));
            }
        }
        while self.bytes + size > self.cfg.budget_bytes {
            let victim = self.entries.values().min_by_key(|e| e.lru_stamp).map(|e| e.spt_id).unwrap();
            let old = self.remove(victim).unwrap();
            if old.dirty {
                out.push((old.spt_id, old.block));
            }
        }
        entry.lru_stamp = self.tick();
        self.bytes += size;
        self.entries.insert(entry.spt_id, entry);
        Ok(out)
    }

    pub fn remove(&mut self, spt_id: u32) -> Option<CacheEntry> {
        let e = self.entries.remove(&spt_id)?;
        self.bytes -= e.bytes();
        Some(e)
    }

    /// Empties the cache, returning dirty blocks ordered by spt_id.
    pub fn flush(&mut self) -> Vec<Evicted> {
        let mut all: Vec<_> = self.entries.drain().map(|(_, e)| e).collect();
        self.bytes = 0;
        all.sort_by_key(|e| e.spt_id);
        all.into_iter().filter(|e| e.dirty).map(|e| (e.spt_id, e.block)).collect()
    }

    /// Flushes when `iteration` is a multiple of the flush interval.
    pub fn tick_and_maybe_flush(&mut self, iteration: u64) -> Vec<Evicted> {
        if iteration.is_multiple_of(self.cfg.flush_interval) {
            self.flush()
        } else {
            Vec::new()
        }
    }
}
