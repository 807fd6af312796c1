//! Binary Gaussian hierarchy.
//!
//! Nodes live in index-addressed arrays. Leaves are trained Gaussians,
//! internal nodes are merged approximations of their two children. Node
//! indices are stable: mutations only rewire parent/child links and reuse
//! freed slots, they never move a node.

mod build;
mod cut;
mod densify;
mod validate;

pub use build::{build_hierarchy, build_hierarchy_with_skybox, merge_children, merge_moments, MergedMoments};
pub(crate) use cut::bfs_into;
pub use cut::{bfs_cut, bfs_cut_subtree, CutSet};
pub use densify::{densify_spawn, respawn_dead, split_gaussian, SplitConfig};
pub use validate::{validate, Diagnostics};

use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;

pub type NodeId = u32;

/// Sentinel for "no node".
pub const NONE: NodeId = u32::MAX;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hierarchy {
    pub(crate) nodes: Vec<GaussianAttributes>,
    pub(crate) parent: Vec<NodeId>,
    pub(crate) children: Vec<Option<[NodeId; 2]>>,
    pub(crate) root: NodeId,
    pub(crate) leaf_count: usize,
    pub(crate) free: Vec<NodeId>,
    /// Root of the always-resident skybox subtree, a direct child of `root`.
    pub(crate) skybox_root: Option<NodeId>,
}

impl Hierarchy {
    /// Assembles a hierarchy from raw arrays, checking structural validity.
    pub fn from_parts(
        nodes: Vec<GaussianAttributes>,
        parent: Vec<NodeId>,
        children: Vec<Option<[NodeId; 2]>>,
        root: NodeId,
        free: Vec<NodeId>,
        skybox_root: Option<NodeId>,
    ) -> Result<Self> {
        let n = nodes.len();
        if parent.len() != n || children.len() != n {
            return Err(Error::InvalidInput("hierarchy arrays differ in length".into()));
        }
        if n > 0 && root as usize >= n {
            return Err(Error::InvalidInput(format!("root {root} out of range")));
        }
        let leaf_count = (0..n).filter(|&i| children[i].is_none() && !free.contains(&(i as NodeId))).count();
        let h = Self {
            nodes,
            parent,
            children,
            root: if n == 0 { NONE } else { root },
            leaf_count,
            free,
            skybox_root,
        };
        let diag = validate::structural(&h);
        if diag.structural_violations() != 0 {
            return Err(Error::InvalidInput(format!("hierarchy is not a valid binary tree: {diag:?}")));
        }
        Ok(h)
    }

    /// Number of node slots, including free ones.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live_count() == 0
    }

    /// Number of nodes reachable from the root.
    pub fn live_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn skybox_root(&self) -> Option<NodeId> {
        self.skybox_root
    }

    /// Root of the scene proper, excluding the skybox subtree.
    pub fn scene_root(&self) -> NodeId {
        match (self.skybox_root, self.children(self.root)) {
            (Some(sky), Some([a, b])) => {
                if a == sky {
                    b
                } else {
                    a
                }
            }
            _ => self.root,
        }
    }

    pub fn free_slots(&self) -> &[NodeId] {
        &self.free
    }

    pub fn nodes(&self) -> &[GaussianAttributes] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &GaussianAttributes {
        &self.nodes[id as usize]
    }

    #[inline]
    pub fn node_mut(&mut self, id: NodeId) -> &mut GaussianAttributes {
        &mut self.nodes[id as usize]
    }

    #[inline]
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        match self.parent[id as usize] {
            NONE => None,
            p => Some(p),
        }
    }

    #[inline]
    pub fn children(&self, id: NodeId) -> Option<[NodeId; 2]> {
        self.children[id as usize]
    }

    #[inline]
    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.children[id as usize].is_none()
    }

    pub fn is_free(&self, id: NodeId) -> bool {
        self.free.contains(&id)
    }

    pub fn parents_raw(&self) -> &[NodeId] {
        &self.parent
    }

    pub fn children_raw(&self) -> &[Option<[NodeId; 2]>] {
        &self.children
    }

    /// All nodes of the subtree rooted at `root`, in depth-first preorder.
    pub fn subtree(&self, root: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let Some([a, b]) = self.children(n) {
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    pub fn subtree_leaves(&self, root: NodeId) -> Vec<NodeId> {
        self.subtree(root).into_iter().filter(|&n| self.is_leaf(n)).collect()
    }

    /// Leaves reachable from the root.
    pub fn leaves(&self) -> Vec<NodeId> {
        if self.root == NONE {
            return Vec::new();
        }
        self.subtree_leaves(self.root)
    }

    /// True if `ancestor` lies on the path from `node` to the root (a node
    /// is not its own ancestor).
    pub fn is_ancestor(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut cur = self.parent(node);
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.parent(p);
        }
        false
    }

    pub fn in_skybox(&self, node: NodeId) -> bool {
        let Some(sky) = self.skybox_root else { return false };
        node == sky || self.is_ancestor(sky, node)
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        if self.root == NONE {
            return 0;
        }
        let mut max = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((n, d)) = stack.pop() {
            max = max.max(d);
            if let Some([a, b]) = self.children(n) {
                stack.push((a, d + 1));
                stack.push((b, d + 1));
            }
        }
        max
    }

    /// Recomputes every internal node as the merge of its children,
    /// bottom-up.
    pub fn remerge_internal(&mut self) {
        if self.root == NONE {
            return;
        }
        let order = self.subtree(self.root);
        for &n in order.iter().rev() {
            if let Some([a, b]) = self.children(n) {
                let merged = merge_children(self.node(a), self.node(b));
                self.nodes[n as usize] = merged;
            }
        }
    }

    pub(crate) fn alloc_slot(&mut self, attrs: GaussianAttributes) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = attrs;
            self.parent[id as usize] = NONE;
            self.children[id as usize] = None;
            id
        } else {
            let id = self.nodes.len() as NodeId;
            self.nodes.push(attrs);
            self.parent.push(NONE);
            self.children.push(None);
            id
        }
    }
}
