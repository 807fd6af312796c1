//! Hierarchical sequential point trees.
//!
//! A breadth-first volume cut splits the hierarchy into an upper part,
//! traversed node by node every frame, and lower subtrees. Lower subtrees
//! with enough nodes become [`Spt`]s, smaller ones stay as plain hierarchy
//! ("passthrough"). A view cut walks the upper part, then cuts every SPT it
//! reaches with a single distance to the SPT root. Nodes inside SPTs are
//! never read from the hierarchy during a cut.

use std::collections::{HashMap, VecDeque};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::frustum::{sphere_intersects_frustum, Frustum};
use crate::hierarchy::{bfs_into, Hierarchy, NodeId, NONE};
use crate::lod::{LodConfig, LodMetric};
use crate::spt::{build_spt, cut_spt, Spt};

/// Where a rendered node came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Upper,
    Spt,
    Passthrough,
    Skybox,
}

/// Role of a hierarchy slot within an [`Hspt`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Free,
    /// The root joining scene and skybox; never rendered.
    Bridge,
    Upper,
    Spt(u32),
    Passthrough,
    Skybox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Attach {
    Spt(u32),
    Passthrough,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hspt {
    /// Nodes above the volume cut, ascending.
    pub upper_nodes: Vec<NodeId>,
    /// Indexed by spt_id.
    pub spts: Vec<Spt>,
    /// Roots of lower subtrees too small for an SPT, ascending.
    pub passthrough_roots: Vec<NodeId>,
    /// Always rendered, never part of a cut.
    pub skybox_leaves: Vec<NodeId>,
    pub size_threshold: f64,
    pub min_subtree: usize,
    /// Configuration the SPT keys were built with; also drives stage 1.
    pub lod: LodConfig,
    start: NodeId,
    attach: HashMap<NodeId, Attach>,
}

/// One SPT reached by a view cut.
#[derive(Clone, Debug, PartialEq)]
pub struct SptSelection {
    pub spt_id: u32,
    pub d_root: f64,
    pub prefix_len: usize,
    /// Record positions of the selected nodes within the prefix.
    pub positions: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderSet {
    pub nodes: Vec<NodeId>,
    pub sources: Vec<Source>,
    pub per_spt: Vec<SptSelection>,
    /// Upper cut nodes, roots of reached SPTs and passthrough cut nodes:
    /// the cut before SPTs are expanded.
    pub stage1: Vec<NodeId>,
}

impl RenderSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, n: NodeId, s: Source) {
        self.nodes.push(n);
        self.sources.push(s);
    }
}

/// Volume below which a node roots a lower subtree: the cube of 1/64 of the
/// leaf-mean bounding box diagonal.
pub fn default_size_threshold(h: &Hierarchy) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let start = h.scene_root();
    if start == NONE {
        return 1.0;
    }
    for n in h.subtree_leaves(start) {
        let m = h.node(n).mean;
        for k in 0..3 {
            lo[k] = lo[k].min(m[k] as f64);
            hi[k] = hi[k].max(m[k] as f64);
        }
    }
    let diag = (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt();
    if diag > 0.0 {
        (diag / 64.0).powi(3)
    } else {
        1.0
    }
}

fn volume(scale: &[f32; 3]) -> f64 {
    scale[0] as f64 * scale[1] as f64 * scale[2] as f64
}

/// Partitions `h` by the volume cut `s¹s²s³ < size_threshold`.
pub fn build_hspt(h: &Hierarchy, size_threshold: f64, min_subtree: usize, cfg: &LodConfig) -> Result<Hspt> {
    if !(size_threshold > 0.0) || !size_threshold.is_finite() {
        return Err(Error::InvalidParameter(format!("size threshold must be positive, got {size_threshold}")));
    }
    if min_subtree == 0 {
        return Err(Error::InvalidParameter("min_subtree must be at least 1".into()));
    }
    cfg.validate()?;
    if h.root() == NONE {
        return Err(Error::EmptyScene);
    }
    let start = h.scene_root();
    let mut upper = Vec::new();
    let mut spts = Vec::new();
    let mut passthrough = Vec::new();
    let mut attach = HashMap::new();
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        let g = h.node(n);
        if volume(&g.scale) < size_threshold {
            if subtree_size(h, n) >= min_subtree {
                attach.insert(n, Attach::Spt(spts.len() as u32));
                spts.push(build_spt(h, n, cfg));
            } else {
                attach.insert(n, Attach::Passthrough);
                passthrough.push(n);
            }
            continue;
        }
        upper.push(n);
        if let Some([a, b]) = h.children(n) {
            queue.push_back(a);
            queue.push_back(b);
        }
    }
    upper.sort_unstable();
    passthrough.sort_unstable();
    let skybox_leaves = match h.skybox_root() {
        Some(sky) => {
            let mut v = h.subtree_leaves(sky);
            v.sort_unstable();
            v
        }
        None => Vec::new(),
    };
    Ok(Hspt {
        upper_nodes: upper,
        spts,
        passthrough_roots: passthrough,
        skybox_leaves,
        size_threshold,
        min_subtree,
        lod: *cfg,
        start,
        attach,
    })
}

fn subtree_size(h: &Hierarchy, n: NodeId) -> usize {
    let mut count = 0;
    let mut stack = vec![n];
    while let Some(x) = stack.pop() {
        count += 1;
        if let Some([a, b]) = h.children(x) {
            stack.push(a);
            stack.push(b);
        }
    }
    count
}

/// Rebuilds after densification with surface-area keys.
pub fn rebuild_after_densify(hspt: &Hspt, h: &Hierarchy) -> Result<Hspt> {
    build_hspt(h, hspt.size_threshold, hspt.min_subtree, &hspt.lod.with_metric(LodMetric::SurfaceArea))
}

impl Hspt {
    /// Reassembles an HSPT from its stored parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        h: &Hierarchy,
        upper_nodes: Vec<NodeId>,
        spts: Vec<Spt>,
        passthrough_roots: Vec<NodeId>,
        skybox_leaves: Vec<NodeId>,
        size_threshold: f64,
        min_subtree: usize,
        lod: LodConfig,
    ) -> Result<Self> {
        let mut attach = HashMap::new();
        for (i, s) in spts.iter().enumerate() {
            attach.insert(s.root, Attach::Spt(i as u32));
        }
        for &p in &passthrough_roots {
            attach.insert(p, Attach::Passthrough);
        }
        let start = h.scene_root();
        if start == NONE {
            return Err(Error::EmptyScene);
        }
        if upper_nodes.is_empty() && !attach.contains_key(&start) {
            return Err(Error::InvalidInput("scene root is neither upper nor attached".into()));
        }
        Ok(Self {
            upper_nodes,
            spts,
            passthrough_roots,
            skybox_leaves,
            size_threshold,
            min_subtree,
            lod,
            start,
            attach,
        })
    }

    /// Root of the traversal (the scene root, below any skybox bridge).
    pub fn start(&self) -> NodeId {
        self.start
    }

    pub fn spt_of_root(&self, n: NodeId) -> Option<u32> {
        match self.attach.get(&n) {
            Some(Attach::Spt(id)) => Some(*id),
            _ => None,
        }
    }

    pub fn is_passthrough_root(&self, n: NodeId) -> bool {
        matches!(self.attach.get(&n), Some(Attach::Passthrough))
    }

    pub fn spt_node_count(&self) -> usize {
        self.spts.iter().map(Spt::len).sum()
    }

    /// Role of every slot of `h`.
    pub fn node_roles(&self, h: &Hierarchy) -> Vec<NodeRole> {
        let mut roles = vec![NodeRole::Free; h.len()];
        if let Some(sky) = h.skybox_root() {
            roles[h.root() as usize] = NodeRole::Bridge;
            for n in h.subtree(sky) {
                roles[n as usize] = NodeRole::Skybox;
            }
        }
        for &n in &self.upper_nodes {
            roles[n as usize] = NodeRole::Upper;
        }
        for (id, s) in self.spts.iter().enumerate() {
            for r in &s.records {
                roles[r.node as usize] = NodeRole::Spt(id as u32);
            }
        }
        for &p in &self.passthrough_roots {
            for n in h.subtree(p) {
                roles[n as usize] = NodeRole::Passthrough;
            }
        }
        roles
    }
}

/// Two-stage view cut.
pub fn cut_hspt(hspt: &Hspt, h: &Hierarchy, cam: &Camera, cull: bool) -> RenderSet {
    cut_hspt_traced(hspt, h, cam, cull, &mut |_| {})
}

/// [`cut_hspt`] reporting every hierarchy node it reads to `touch`.
pub fn cut_hspt_traced(hspt: &Hspt, h: &Hierarchy, cam: &Camera, cull: bool, touch: &mut dyn FnMut(NodeId)) -> RenderSet {
    let frustum = if cull { Some(cam.frustum()) } else { None };
    let mut out = RenderSet::default();
    let mut reached = Vec::new();
    stage1(hspt, h, cam, frustum.as_ref(), &mut out, &mut reached, touch);

    let p = cam.position_vec();
    for id in reached {
        let spt = &hspt.spts[id as usize];
        let d_root = (spt.root_center_vec() - p).norm();
        let cut = cut_spt(spt, d_root);
        for &n in &cut.selected {
            out.push(n, Source::Spt);
        }
        out.per_spt.push(SptSelection {
            spt_id: id,
            d_root,
            prefix_len: cut.prefix_len,
            positions: cut.positions,
        });
    }
    for &n in &hspt.skybox_leaves {
        out.push(n, Source::Skybox);
    }
    out
}

fn stage1(
    hspt: &Hspt,
    h: &Hierarchy,
    cam: &Camera,
    frustum: Option<&Frustum>,
    out: &mut RenderSet,
    reached: &mut Vec<u32>,
    touch: &mut dyn FnMut(NodeId),
) {
    let p = cam.position_vec();
    let cfg = &hspt.lod;
    let mut queue = VecDeque::from([hspt.start]);
    while let Some(n) = queue.pop_front() {
        match hspt.attach.get(&n) {
            Some(&Attach::Spt(id)) => {
                let spt = &hspt.spts[id as usize];
                if let Some(f) = frustum {
                    if !sphere_intersects_frustum(&spt.root_center_vec(), spt.root_radius as f64, f) {
                        continue;
                    }
                }
                out.stage1.push(n);
                reached.push(id);
            }
            Some(Attach::Passthrough) => {
                let mut cut = Vec::new();
                bfs_into(h, n, cam, cfg, frustum, &mut cut, touch);
                for &c in &cut {
                    out.push(c, Source::Passthrough);
                }
                out.stage1.extend_from_slice(&cut);
            }
            None => {
                touch(n);
                let g = h.node(n);
                let mean = g.mean_vec();
                if let Some(f) = frustum {
                    if !sphere_intersects_frustum(&mean, g.cull_radius(), f) {
                        continue;
                    }
                }
                if (mean - p).norm() >= cfg.min_distance(&g.scale) {
                    out.push(n, Source::Upper);
                    out.stage1.push(n);
                    continue;
                }
                match h.children(n) {
                    Some([a, b]) => {
                        queue.push_back(a);
                        queue.push_back(b);
                    }
                    None => {
                        out.push(n, Source::Upper);
                        out.stage1.push(n);
                    }
                }
            }
        }
    }
}
