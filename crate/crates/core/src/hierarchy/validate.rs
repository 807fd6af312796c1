use super::{Hierarchy, NONE};
use crate::lod::LodConfig;

/// Structural and LoD-ordering diagnostics of a hierarchy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Nodes reached more than once from the root.
    pub cycles: usize,
    /// Internal nodes without two distinct, in-range children.
    pub arity_violations: usize,
    /// Child links whose parent pointer disagrees.
    pub link_mismatches: usize,
    /// Live nodes not reachable from the root, plus free slots that are.
    pub orphans: usize,
    /// Non-root nodes whose minimum distance is not below their parent's.
    /// Allowed, reported only.
    pub monotonicity_violations: usize,
}

impl Diagnostics {
    pub fn structural_violations(&self) -> usize {
        self.cycles + self.arity_violations + self.link_mismatches + self.orphans
    }
}

/// Checks tree structure and counts LoD monotonicity violations.
pub fn validate(h: &Hierarchy, cfg: &LodConfig) -> Diagnostics {
    let mut d = structural(h);
    if h.root == NONE {
        return d;
    }
    let mut stack = vec![h.root];
    let mut seen = vec![false; h.len()];
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut seen[n as usize], true) {
            continue;
        }
        if let Some(p) = h.parent(n) {
            if cfg.min_distance(&h.node(n).scale) >= cfg.min_distance(&h.node(p).scale) {
                d.monotonicity_violations += 1;
            }
        }
        if let Some(children) = h.children(n) {
            stack.extend(children.into_iter().filter(|&c| (c as usize) < h.len()));
        }
    }
    d
}

pub(crate) fn structural(h: &Hierarchy) -> Diagnostics {
    let mut d = Diagnostics::default();
    let n = h.len();
    if h.root == NONE {
        d.orphans = h.live_count();
        return d;
    }
    let mut free = vec![false; n];
    for &f in &h.free {
        if (f as usize) < n {
            free[f as usize] = true;
        }
    }
    if h.parent[h.root as usize] != NONE {
        d.link_mismatches += 1;
    }
    let mut visited = vec![false; n];
    let mut stack = vec![h.root];
    while let Some(node) = stack.pop() {
        let i = node as usize;
        if visited[i] {
            d.cycles += 1;
            continue;
        }
        visited[i] = true;
        if free[i] {
            d.orphans += 1;
        }
        if let Some([a, b]) = h.children[i] {
            if a == b || a as usize >= n || b as usize >= n {
                d.arity_violations += 1;
                continue;
            }
            for c in [a, b] {
                if h.parent[c as usize] != node {
                    d.link_mismatches += 1;
                }
                stack.push(c);
            }
        }
    }
    d.orphans += (0..n).filter(|&i| !visited[i] && !free[i]).count();
    d
}
