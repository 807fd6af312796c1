use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use super::{Hierarchy, NodeId, NONE};
use crate::error::{Error, Result};
use crate::gaussian::GaussianAttributes;

/// Weighted first and second moments of a two-component mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergedMoments {
    pub weights: [f64; 2],
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

fn merge_weight(g: &GaussianAttributes) -> f64 {
    g.opacity as f64 * g.volume()
}

/// Moment-matched mean and covariance of `a` and `b`, each weighted by
/// opacity times volume. Falls back to equal weights when both vanish.
pub fn merge_moments(a: &GaussianAttributes, b: &GaussianAttributes) -> MergedMoments {
    let (mut wa, mut wb) = (merge_weight(a), merge_weight(b));
    if !(wa + wb > 0.0) || !(wa + wb).is_finite() {
        wa = 1.0;
        wb = 1.0;
    }
    let total = wa + wb;
    let (ma, mb) = (a.mean_vec(), b.mean_vec());
    let mean = (ma * wa + mb * wb) / total;
    let da = ma - mean;
    let db = mb - mean;
    let covariance = ((a.covariance() + da * da.transpose()) * wa + (b.covariance() + db * db.transpose()) * wb) / total;
    MergedMoments {
        weights: [wa / total, wb / total],
        mean,
        covariance,
    }
}

/// Merged parent approximation of two children.
///
/// Mean and covariance match the weighted mixture; the covariance is
/// re-decomposed into scale and rotation by eigendecomposition. Opacity is
/// the larger of the two, colors are weight-averaged.
pub fn merge_children(a: &GaussianAttributes, b: &GaussianAttributes) -> GaussianAttributes {
    let m = merge_moments(a, b);
    let (scale, rotation) = decompose_covariance(&m.covariance);
    let [wa, wb] = m.weights;
    let blend = |x: f32, y: f32| (x as f64 * wa + y as f64 * wb) as f32;
    let sh_len = a.sh_rest.len().max(b.sh_rest.len());
    let sh_rest = (0..sh_len)
        .map(|k| blend(a.sh_rest.get(k).copied().unwrap_or(0.0), b.sh_rest.get(k).copied().unwrap_or(0.0)))
        .collect();
    GaussianAttributes {
        mean: [m.mean.x as f32, m.mean.y as f32, m.mean.z as f32],
        scale,
        rotation,
        opacity: a.opacity.max(b.opacity),
        base_color: [0, 1, 2].map(|c| blend(a.base_color[c], b.base_color[c])),
        sh_rest,
    }
}

/// Scale and rotation (`[w, x, y, z]`) with `R diag(s²) Rᵀ = cov`.
pub(crate) fn decompose_covariance(cov: &Matrix3<f64>) -> ([f32; 3], [f32; 4]) {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let floor = (lambda_max * 1e-12).max(1e-30);
    let mut axes = Matrix3::from_columns(&order.map(|i| eig.eigenvectors.column(i).into_owned()));
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(axes));
    let scale = order.map(|i| eig.eigenvalues[i].max(floor).sqrt() as f32);
    (scale, [q.w as f32, q.i as f32, q.j as f32, q.k as f32])
}

struct Builder<'a> {
    leaves: &'a [GaussianAttributes],
    nodes: Vec<GaussianAttributes>,
    parent: Vec<NodeId>,
    children: Vec<Option<[NodeId; 2]>>,
}

impl Builder<'_> {
    /// Median split along the longest axis of the mean bounding box.
    fn split(&mut self, ids: &mut [NodeId]) -> NodeId {
        if ids.len() == 1 {
            return ids[0];
        }
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for &i in ids.iter() {
            let m = self.leaves[i as usize].mean;
            for k in 0..3 {
                lo[k] = lo[k].min(m[k]);
                hi[k] = hi[k].max(m[k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap();
        let mid = ids.len() / 2;
        let leaves = self.leaves;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            leaves[a as usize].mean[axis].total_cmp(&leaves[b as usize].mean[axis]).then(a.cmp(&b))
        });
        let (left_ids, right_ids) = ids.split_at_mut(mid);
        let left = self.split(left_ids);
        let right = self.split(right_ids);
        let merged = merge_children(&self.nodes[left as usize], &self.nodes[right as usize]);
        self.push_internal(merged, left, right)
    }

    fn push_internal(&mut self, attrs: GaussianAttributes, left: NodeId, right: NodeId) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(attrs);
        self.parent.push(NONE);
        self.children.push(Some([left, right]));
        self.parent[left as usize] = id;
        self.parent[right as usize] = id;
        id
    }
}

/// Builds a hierarchy over `leaves` by recursive median splits. Leaf `i`
/// keeps node index `i`; internal nodes follow in post-order.
pub fn build_hierarchy(leaves: Vec<GaussianAttributes>) -> Result<Hierarchy> {
    build_hierarchy_with_skybox(leaves, Vec::new())
}

/// Like [`build_hierarchy`], with a separate skybox subtree. When `skybox`
/// is non-empty the root has exactly two children: the scene subtree and the
/// skybox subtree. Skybox leaves take indices after the scene leaves.
pub fn build_hierarchy_with_skybox(scene: Vec<GaussianAttributes>, skybox: Vec<GaussianAttributes>) -> Result<Hierarchy> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    let n_scene = scene.len();
    let mut all = scene;
    all.extend(skybox);
    let n = all.len();
    let mut b = Builder {
        leaves: &all,
        nodes: all.clone(),
        parent: vec![NONE; n],
        children: vec![None; n],
    };
    let mut scene_ids: Vec<NodeId> = (0..n_scene as NodeId).collect();
    let scene_root = b.split(&mut scene_ids);
    let (root, skybox_root) = if n > n_scene {
        let mut sky_ids: Vec<NodeId> = (n_scene as NodeId..n as NodeId).collect();
        let sky_root = b.split(&mut sky_ids);
        let merged = merge_children(&b.nodes[scene_root as usize], &b.nodes[sky_root as usize]);
        (b.push_internal(merged, scene_root, sky_root), Some(sky_root))
    } else {
        (scene_root, None)
    };
    Ok(Hierarchy {
        nodes: b.nodes,
        parent: b.parent,
        children: b.children,
        root,
        leaf_count: n,
        free: Vec::new(),
        skybox_root,
    })
}
