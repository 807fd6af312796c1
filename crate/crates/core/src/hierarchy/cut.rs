use std::collections::VecDeque;

use super::{Hierarchy, NodeId, NONE};
use crate::camera::Camera;
use crate::frustum::{sphere_intersects_frustum, Frustum};
use crate::lod::LodConfig;

/// Antichain of hierarchy nodes selected for rendering, in BFS order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CutSet {
    pub node_ids: Vec<NodeId>,
}

impl CutSet {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.node_ids.contains(&n)
    }
}

/// Breadth-first LoD cut of the whole hierarchy.
///
/// A node whose distance to the camera reaches its minimum distance enters
/// the cut and its children are skipped; otherwise its children are visited.
/// Leaves that are still too close enter the cut as the finest available
/// detail. With a frustum, subtrees whose `3 · max scale` sphere misses it
/// are dropped.
pub fn bfs_cut(h: &Hierarchy, cam: &Camera, cfg: &LodConfig, frustum: Option<&Frustum>) -> CutSet {
    if h.root == NONE {
        return CutSet::default();
    }
    bfs_cut_subtree(h, h.root, cam, cfg, frustum)
}

/// [`bfs_cut`] restricted to the subtree under `start`.
pub fn bfs_cut_subtree(h: &Hierarchy, start: NodeId, cam: &Camera, cfg: &LodConfig, frustum: Option<&Frustum>) -> CutSet {
    let mut out = Vec::new();
    bfs_into(h, start, cam, cfg, frustum, &mut out, &mut |_| {});
    CutSet { node_ids: out }
}

pub(crate) fn bfs_into(
    h: &Hierarchy,
    start: NodeId,
    cam: &Camera,
    cfg: &LodConfig,
    frustum: Option<&Frustum>,
    out: &mut Vec<NodeId>,
    touch: &mut dyn FnMut(NodeId),
) {
    let p = cam.position_vec();
    let mut queue = VecDeque::with_capacity(64);
    queue.push_back(start);
    while let Some(n) = queue.pop_front() {
        touch(n);
        let g = h.node(n);
        let mean = g.mean_vec();
        if let Some(f) = frustum {
            if !sphere_intersects_frustum(&mean, g.cull_radius(), f) {
                continue;
            }
        }
        if (mean - p).norm() >= cfg.min_distance(&g.scale) {
            out.push(n);
            continue;
        }
        match h.children(n) {
            Some([a, b]) => {
                queue.push_back(a);
                queue.push_back(b);
            }
            None => out.push(n),
        }
    }
}
