use nalgebra::Vector3;

/// Plane `normal · x + offset = 0`; positive signed distance is outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Convex view volume bounded by six planes with outward unit normals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub planes: [Plane; 6],
}

/// Conservative sphere/frustum test: `false` only when the sphere lies
/// strictly outside one of the planes.
pub fn sphere_intersects_frustum(center: &Vector3<f64>, radius: f64, f: &Frustum) -> bool {
    f.planes.iter().all(|p| p.signed_distance(center) <= radius)
}
