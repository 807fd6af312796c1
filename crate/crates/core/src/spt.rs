//! Sequential point trees.
//!
//! A subtree is flattened into records `(key_self, key_parent, node)` sorted
//! by `key_parent` descending. For a root distance `d`, the nodes to render
//! are exactly those with `key_self <= d < key_parent`; all of them lie in
//! the prefix `key_parent > d`, which a binary search finds.
//!
//! `key_self` is the conservative minimum distance `m_d(i) + |μ_i - μ_root|`:
//! by the triangle inequality any node with `key_self <= |μ_root - p|` also
//! satisfies `m_d(i) <= |μ_i - p|`, so a single distance per tree suffices.
//! `key_parent` is the smallest `key_self` over the node's ancestors. On
//! trees whose keys shrink towards the leaves this is the parent's key; on
//! trees where optimization broke that ordering it keeps the interval test
//! equal to a top-down cut, so a node and one of its ancestors are never
//! selected together.

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::hierarchy::{Hierarchy, NodeId};
use crate::lod::LodConfig;

/// Packed size of one record on disk and in device memory.
pub const RECORD_BYTES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SptRecord {
    pub key_self: f32,
    pub key_parent: f32,
    pub node: NodeId,
}

impl SptRecord {
    /// Little-endian `f32 key_self, f32 key_parent, u32 node`.
    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut out = [0u8; RECORD_BYTES];
        out[0..4].copy_from_slice(&self.key_self.to_le_bytes());
        out[4..8].copy_from_slice(&self.key_parent.to_le_bytes());
        out[8..12].copy_from_slice(&self.node.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; RECORD_BYTES]) -> Self {
        Self {
            key_self: f32::from_le_bytes(b[0..4].try_into().unwrap()),
            key_parent: f32::from_le_bytes(b[4..8].try_into().unwrap()),
            node: u32::from_le_bytes(b[8..12].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spt {
    pub root: NodeId,
    pub root_center: [f32; 3],
    /// `3 · max scale` of the root, for frustum culling without touching
    /// node attributes.
    pub root_radius: f32,
    pub records: Vec<SptRecord>,
}

/// Result of cutting one SPT.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SptCut {
    pub prefix_len: usize,
    pub selected: Vec<NodeId>,
    /// Record positions (within the prefix) of `selected`.
    pub positions: Vec<u32>,
}

/// How record keys are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SptKeying {
    /// `m_d(i) + |μ_i - μ_root|`.
    Conservative,
    /// Plain `m_d(i)`. Used only to demonstrate that the root-distance test
    /// needs the correction.
    Uncorrected,
}

impl Spt {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn root_center_vec(&self) -> Vector3<f64> {
        Vector3::new(self.root_center[0] as f64, self.root_center[1] as f64, self.root_center[2] as f64)
    }

    pub fn root_distance(&self, cam: &Camera) -> f64 {
        (self.root_center_vec() - cam.position_vec()).norm()
    }

    /// Number of records with `key_parent > d_root`.
    pub fn prefix_len(&self, d_root: f64) -> usize {
        self.records.partition_point(|r| r.key_parent as f64 > d_root)
    }
}

/// Smallest `f32` strictly above `v`, so stored keys never undercut the
/// exact value.
fn key_up(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) > v {
        f
    } else {
        f.next_up()
    }
}

/// Builds the SPT of the subtree under `subtree_root`.
pub fn build_spt(h: &Hierarchy, subtree_root: NodeId, cfg: &LodConfig) -> Spt {
    build_spt_with(h, subtree_root, cfg, SptKeying::Conservative)
}

pub fn build_spt_with(h: &Hierarchy, subtree_root: NodeId, cfg: &LodConfig, keying: SptKeying) -> Spt {
    let root = h.node(subtree_root);
    let center = root.mean_vec();
    let mut records = Vec::new();
    // (node, smallest key among strict ancestors)
    let mut stack = vec![(subtree_root, f32::INFINITY)];
    while let Some((n, ancestor_min)) = stack.pop() {
        let g = h.node(n);
        let md = cfg.min_distance(&g.scale);
        let key = match keying {
            SptKeying::Conservative => key_up(md + (g.mean_vec() - center).norm()),
            SptKeying::Uncorrected => key_up(md),
        };
        records.push(SptRecord {
            key_self: key,
            key_parent: ancestor_min,
            node: n,
        });
        if let Some([a, b]) = h.children(n) {
            let next = ancestor_min.min(key);
            stack.push((b, next));
            stack.push((a, next));
        }
    }
    records.sort_by(|x, y| y.key_parent.total_cmp(&x.key_parent).then(x.node.cmp(&y.node)));
    Spt {
        root: subtree_root,
        root_center: root.mean,
        root_radius: root.cull_radius() as f32,
        records,
    }
}

/// Cuts an SPT for a camera at distance `d_root` from its root center.
pub fn cut_spt(spt: &Spt, d_root: f64) -> SptCut {
    let prefix_len = spt.prefix_len(d_root);
    let mut selected = Vec::new();
    let mut positions = Vec::new();
    for (i, r) in spt.records[..prefix_len].iter().enumerate() {
        if r.key_self as f64 <= d_root {
            selected.push(r.node);
            positions.push(i as u32);
        }
    }
    SptCut {
        prefix_len,
        selected,
        positions,
    }
}

/// True iff every node the SPT selects for `cam` satisfies
/// `m_d(i) <= |μ_i - p_cam|`.
pub fn conservative_guarantee_check(spt: &Spt, h: &Hierarchy, cam: &Camera, cfg: &LodConfig) -> bool {
    let p = cam.position_vec();
    let cut = cut_spt(spt, spt.root_distance(cam));
    cut.selected.iter().all(|&n| {
        let g = h.node(n);
        cfg.min_distance(&g.scale) <= (g.mean_vec() - p).norm()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianAttributes;
    use crate::hierarchy::{build_hierarchy, NONE};
    use crate::lod::LodMetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Hierarchy {
        let leaves = (0..n)
            .map(|_| {
                GaussianAttributes::new(
                    [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                    [rng.random_range(0.01..0.2), rng.random_range(0.01..0.2), rng.random_range(0.01..0.2)],
                    [1.0, 0.0, 0.0, 0.0],
                    rng.random_range(0.1..1.0),
                    [0.5; 3],
                )
            })
            .collect();
        build_hierarchy(leaves).unwrap()
    }

    fn bfs_on_keys(h: &Hierarchy, spt: &Spt, d: f64) -> Vec<NodeId> {
        let key = |n: NodeId| spt.records.iter().find(|r| r.node == n).unwrap().key_self as f64;
        let mut out = Vec::new();
        let mut queue = std::collections::VecDeque::from([spt.root]);
        while let Some(n) = queue.pop_front() {
            if key(n) <= d {
                out.push(n);
            } else if let Some([a, b]) = h.children(n) {
                queue.push_back(a);
                queue.push_back(b);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn single_node_subtree() {
        let h = build_hierarchy(vec![GaussianAttributes::default()]).unwrap();
        let spt = build_spt(&h, 0, &LodConfig::default());
        assert_eq!(spt.len(), 1);
        assert_eq!(spt.records[0].key_parent, f32::INFINITY);
    }

    #[test]
    fn leaf_keys_add_root_distance() {
        let a = GaussianAttributes::isotropic([-2.0, 0.0, 0.0], 0.1, 1.0, [0.5; 3]);
        let b = GaussianAttributes::isotropic([2.0, 0.0, 0.0], 0.1, 1.0, [0.5; 3]);
        let h = build_hierarchy(vec![a, b]).unwrap();
        let cfg = LodConfig::new(10.0, LodMetric::MaxScale);
        let spt = build_spt(&h, h.root(), &cfg);
        let leaf = spt.records.iter().find(|r| r.node == 0).unwrap();
        approx::assert_relative_eq!(leaf.key_self as f64, 1.0 + 2.0, epsilon = 1e-6);
        assert!(leaf.key_self as f64 >= 3.0);
    }

    /// The three-record example: root key 10, leaves 2 and 3.
    fn hand_spt() -> Spt {
        Spt {
            root: 0,
            root_center: [0.0; 3],
            root_radius: 1.0,
            records: vec![
                SptRecord {
                    key_self: 10.0,
                    key_parent: f32::INFINITY,
                    node: 0,
                },
                SptRecord {
                    key_self: 2.0,
                    key_parent: 10.0,
                    node: 1,
                },
                SptRecord {
                    key_self: 3.0,
                    key_parent: 10.0,
                    node: 2,
                },
            ],
        }
    }

    #[test]
    fn hand_evaluated_interval_test() {
        let spt = hand_spt();
        let cut = cut_spt(&spt, 5.0);
        assert_eq!(cut.prefix_len, 3);
        assert_eq!(cut.selected, vec![1, 2]);
        let cut = cut_spt(&spt, 20.0);
        assert_eq!(cut.prefix_len, 1);
        assert_eq!(cut.selected, vec![0]);
        // too close for either leaf: coverage hole
        assert_eq!(cut_spt(&spt, 1.0).selected, Vec::<NodeId>::new());
    }

    #[test]
    fn records_sorted_one_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_tree(&mut rng, 300);
        let spt = build_spt(&h, h.root(), &LodConfig::new(20.0, LodMetric::SurfaceArea));
        assert_eq!(spt.len(), h.live_count());
        assert!(spt.records.windows(2).all(|w| w[0].key_parent >= w[1].key_parent));
        let mut nodes: Vec<_> = spt.records.iter().map(|r| r.node).collect();
        nodes.sort();
        assert_eq!(
            nodes,
            h.subtree(h.root())
                .into_iter()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn cut_equals_bfs_on_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let n = rng.random_range(1..80);
            let h = random_tree(&mut rng, n);
            let spt = build_spt(&h, h.root(), &LodConfig::new(rng.random_range(1.0..50.0), LodMetric::MaxScale));
            let d = rng.random_range(0.0..30.0);
            let mut got = cut_spt(&spt, d).selected;
            got.sort();
            assert_eq!(got, bfs_on_keys(&h, &spt, d));
        }
    }

    #[test]
    fn non_monotone_keys_never_coselect_ancestors() {
        // root (key 10) -> mid (key 15, non-monotone) -> leaves (keys 3, 4)
        let small = |x: f32| GaussianAttributes::isotropic([x, 0.0, 0.0], 0.3, 1.0, [0.5; 3]);
        let h = Hierarchy::from_parts(
            vec![
                GaussianAttributes::isotropic([0.0; 3], 1.0, 1.0, [0.5; 3]),
                GaussianAttributes::isotropic([0.0; 3], 1.5, 1.0, [0.5; 3]),
                small(0.0),
                small(0.1),
                GaussianAttributes::isotropic([0.0; 3], 0.2, 1.0, [0.5; 3]),
            ],
            vec![NONE, 0, 1, 1, 0],
            vec![Some([1, 4]), Some([2, 3]), None, None, None],
            0,
            vec![],
            None,
        )
        .unwrap();
        let spt = build_spt(&h, 0, &LodConfig::new(10.0, LodMetric::MaxScale));
        for d in [0.5, 2.5, 3.5, 5.0, 12.0, 20.0] {
            let sel = cut_spt(&spt, d).selected;
            for &a in &sel {
                for &b in &sel {
                    assert!(!h.is_ancestor(a, b), "d={d}: {a} and {b} co-selected");
                }
            }
            let mut got = sel.clone();
            got.sort();
            assert_eq!(got, bfs_on_keys(&h, &spt, d));
        }
    }

    #[test]
    fn guarantee_holds_at_root_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_tree(&mut rng, 50);
        let cfg = LodConfig::default();
        let spt = build_spt(&h, h.root(), &cfg);
        let c = spt.root_center;
        let cam = Camera::look_at([c[0] as f64, c[1] as f64, c[2] as f64], [0.0, 0.0, 10.0], [0.0, 1.0, 0.0], 1.0, [8, 8]);
        assert!(conservative_guarantee_check(&spt, &h, &cam, &cfg));
    }

    #[test]
    fn record_bytes_round_trip() {
        let r = SptRecord {
            key_self: 1.5,
            key_parent: f32::INFINITY,
            node: 77,
        };
        assert_eq!(SptRecord::from_bytes(&r.to_bytes()), r);
        assert_eq!(r.to_bytes().len(), 12);
    }
}
