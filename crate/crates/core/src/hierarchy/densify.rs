use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Hierarchy, NodeId, NONE};
use crate::error::{Error, Result};
use crate::gaussian::{rotation_matrix, GaussianAttributes};

/// Constants of the two-way split used when a leaf grows children.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Child offset along the dominant axis, in units of the largest scale.
    pub offset: f64,
    /// Divisor applied to the dominant scale of both children.
    pub shrink: f64,
    /// Random perturbation of the offset direction (0 disables).
    pub jitter: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            offset: 0.6,
            shrink: 1.6,
            jitter: 0.0,
        }
    }
}

/// Splits a Gaussian into two that jointly approximate it.
///
/// Children sit at `μ ± offset · s_max · v_max`, their dominant scale is
/// divided by `shrink` and each gets opacity `1 - sqrt(1 - σ)`, so the two
/// composited on top of each other reproduce the original opacity.
pub fn split_gaussian<R: Rng + ?Sized>(g: &GaussianAttributes, cfg: &SplitConfig, rng: &mut R) -> (GaussianAttributes, GaussianAttributes) {
    let axis = (0..3).max_by(|&a, &b| g.scale[a].total_cmp(&g.scale[b]).then(b.cmp(&a))).unwrap();
    let r = rotation_matrix(&g.quaternion());
    let mut dir: Vector3<f64> = r.column(axis).into_owned();
    if cfg.jitter > 0.0 {
        let noise = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        dir = (dir + noise * cfg.jitter).normalize();
    }
    let offset = dir * (cfg.offset * g.scale[axis] as f64);
    let opacity = (1.0 - (1.0 - g.opacity.clamp(0.0, 1.0) as f64).sqrt()) as f32;
    let mut scale = g.scale;
    scale[axis] = (scale[axis] as f64 / cfg.shrink) as f32;
    let mean = g.mean_vec();
    let child = |m: Vector3<f64>| GaussianAttributes {
        mean: [m.x as f32, m.y as f32, m.z as f32],
        scale,
        rotation: g.rotation,
        opacity,
        base_color: g.base_color,
        sh_rest: g.sh_rest.clone(),
    };
    (child(mean + offset), child(mean - offset))
}

/// Turns `leaf` into an internal node with two new children from
/// [`split_gaussian`]. Adds exactly two nodes and one leaf.
pub fn densify_spawn<R: Rng + ?Sized>(h: &mut Hierarchy, leaf: NodeId, cfg: &SplitConfig, rng: &mut R) -> Result<(NodeId, NodeId)> {
    check_live_leaf(h, leaf)?;
    let (a, b) = split_gaussian(h.node(leaf), cfg, rng);
    let left = h.alloc_slot(a);
    let right = h.alloc_slot(b);
    h.parent[left as usize] = leaf;
    h.parent[right as usize] = leaf;
    h.children[leaf as usize] = Some([left, right]);
    h.leaf_count += 1;
    Ok((left, right))
}

/// Relocates a dead leaf.
///
/// The dead leaf's sibling takes its parent's place in the tree; the dead
/// leaf and its former parent are then reused as the two children of
/// `target`, initialized from a split of the target's Gaussian. Node and
/// leaf counts are unchanged.
pub fn respawn_dead<R: Rng + ?Sized>(h: &mut Hierarchy, dead: NodeId, target: NodeId, cfg: &SplitConfig, rng: &mut R) -> Result<()> {
    check_live_leaf(h, dead)?;
    check_live_leaf(h, target)?;
    if dead == h.root {
        return Err(Error::CannotRespawnRoot);
    }
    if dead == target {
        return Err(Error::InvalidTarget {
            node: target,
            reason: "target is the dead leaf itself",
        });
    }
    let parent = h.parent[dead as usize];
    let [c0, c1] = h.children[parent as usize].expect("parent of a leaf is internal");
    let sibling = if c0 == dead { c1 } else { c0 };
    if h.skybox_root.is_some() && parent == h.root {
        return Err(Error::InvalidTarget {
            node: dead,
            reason: "removing this leaf would detach the skybox subtree",
        });
    }

    // Splice the parent out: the sibling takes its slot.
    let grand = h.parent[parent as usize];
    if grand == NONE {
        h.root = sibling;
    } else {
        let slots = h.children[grand as usize].as_mut().expect("grandparent is internal");
        for s in slots.iter_mut() {
            if *s == parent {
                *s = sibling;
            }
        }
    }
    h.parent[sibling as usize] = grand;

    // Reuse both freed slots under the target.
    let (a, b) = split_gaussian(h.node(target), cfg, rng);
    h.nodes[parent as usize] = a;
    h.nodes[dead as usize] = b;
    h.children[parent as usize] = None;
    h.parent[parent as usize] = target;
    h.parent[dead as usize] = target;
    h.children[target as usize] = Some([parent, dead]);
    Ok(())
}

fn check_live_leaf(h: &Hierarchy, n: NodeId) -> Result<()> {
    if n as usize >= h.len() || h.is_free(n) {
        return Err(Error::InvalidTarget {
            node: n,
            reason: "node does not exist",
        });
    }
    if !h.is_leaf(n) {
        return Err(Error::InvalidTarget {
            node: n,
            reason: "node is not a leaf",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_hierarchy, validate};
    use crate::lod::LodConfig;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn leaf(x: f32) -> GaussianAttributes {
        GaussianAttributes::new([x, 0.0, 0.0], [0.3, 0.2, 0.1], [1.0, 0.0, 0.0, 0.0], 0.8, [0.5; 3])
    }

    #[test]
    fn spawn_is_symmetric_about_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = GaussianAttributes::isotropic([1.0, 2.0, 3.0], 0.5, 0.6, [0.2; 3]);
        let mut h = build_hierarchy(vec![g.clone()]).unwrap();
        let (l, r) = densify_spawn(&mut h, 0, &SplitConfig::default(), &mut rng).unwrap();
        let mid = (h.node(l).mean_vec() + h.node(r).mean_vec()) / 2.0;
        assert_relative_eq!(mid, g.mean_vec(), epsilon = 1e-6);
        let off = h.node(l).mean_vec() - g.mean_vec();
        assert_relative_eq!(off.norm(), 0.3, epsilon = 1e-6);
        assert_eq!(h.node(l).scale, h.node(r).scale);
    }

    #[test]
    fn spawn_adds_two_nodes_and_one_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = build_hierarchy((0..5).map(|i| leaf(i as f32)).collect()).unwrap();
        let (n0, l0) = (h.live_count(), h.leaf_count());
        densify_spawn(&mut h, 3, &SplitConfig::default(), &mut rng).unwrap();
        assert_eq!(h.live_count(), n0 + 2);
        assert_eq!(h.leaf_count(), l0 + 1);
        let err = densify_spawn(&mut h, 3, &SplitConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidTarget { .. }));
    }

    #[test]
    fn respawn_in_three_node_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = build_hierarchy(vec![leaf(0.0), leaf(1.0)]).unwrap();
        assert_eq!(h.len(), 3);
        let root = h.root();
        respawn_dead(&mut h, 0, 1, &SplitConfig::default(), &mut rng).unwrap();
        assert_eq!(h.root(), 1);
        assert_eq!(h.len(), 3);
        assert_eq!(h.children(1), Some([root, 0]));
        assert_eq!(validate(&h, &LodConfig::default()).structural_violations(), 0);
    }

    #[test]
    fn respawn_leaf_set_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut h = build_hierarchy((0..8).map(|i| leaf(i as f32)).collect()).unwrap();
        let before: BTreeSet<_> = h.leaves().into_iter().collect();
        let (dead, target) = (2, 6);
        let parent = h.parent(dead).unwrap();
        respawn_dead(&mut h, dead, target, &SplitConfig::default(), &mut rng).unwrap();
        let after: BTreeSet<_> = h.leaves().into_iter().collect();
        let mut expected = before.clone();
        expected.remove(&dead);
        expected.remove(&target);
        expected.insert(parent);
        expected.insert(dead);
        assert_eq!(after, expected);
        assert!(!h.is_leaf(target));
        assert_eq!(h.live_count(), 15);
        assert_eq!(h.leaf_count(), 8);
    }

    #[test]
    fn respawn_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut single = build_hierarchy(vec![leaf(0.0)]).unwrap();
        assert!(matches!(
            respawn_dead(&mut single, 0, 0, &SplitConfig::default(), &mut rng),
            Err(Error::CannotRespawnRoot)
        ));
        let mut h = build_hierarchy((0..4).map(|i| leaf(i as f32)).collect()).unwrap();
        let root = h.root();
        assert!(respawn_dead(&mut h, root, 0, &SplitConfig::default(), &mut rng).is_err());
        assert!(respawn_dead(&mut h, 1, 1, &SplitConfig::default(), &mut rng).is_err());
        assert!(respawn_dead(&mut h, 1, root, &SplitConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn random_interleavings_keep_tree_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut h = build_hierarchy((0..200).map(|i| leaf((i % 17) as f32 + 0.01 * i as f32)).collect()).unwrap();
        let cfg = SplitConfig::default();
        for _ in 0..2000 {
            let leaves = h.leaves();
            let pick = |rng: &mut ChaCha8Rng| leaves[rng.random_range(0..leaves.len())];
            if rng.random_bool(0.5) {
                let n = h.live_count();
                densify_spawn(&mut h, pick(&mut rng), &cfg, &mut rng).unwrap();
                assert_eq!(h.live_count(), n + 2);
            } else {
                let (d, t) = (pick(&mut rng), pick(&mut rng));
                let n = h.live_count();
                if respawn_dead(&mut h, d, t, &cfg, &mut rng).is_ok() {
                    assert_eq!(h.live_count(), n);
                }
            }
        }
        assert_eq!(validate(&h, &LodConfig::default()).structural_violations(), 0);
    }
}
