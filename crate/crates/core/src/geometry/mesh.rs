//! Triangle meshes and point-to-triangle queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Result of a nearest-triangle query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestHit {
    pub tri_index: usize,
    pub barycentric: [f64; 3],
    pub closest_point: Vec3,
    pub distance: f64,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<TriMesh> {
        let mesh = TriMesh { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len() as u32;
        for (i, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidInput(format!(
                    "triangle {i} references a vertex out of range"
                )));
            }
            let [a, b, c] = self.corners(i);
            let area2 = (b - a).cross(c - a).norm();
            if area2 * 0.5 <= 1e-12 {
                return Err(Error::InvalidInput(format!("triangle {i} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let [i, j, k] = self.triangles[tri];
        [
            self.vertices[i as usize],
            self.vertices[j as usize],
            self.vertices[k as usize],
        ]
    }

    pub fn triangle_normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(c - a).normalized()
    }

    pub fn triangle_aabb(&self, tri: usize) -> Aabb {
        let [a, b, c] = self.corners(tri);
        let mut bb = Aabb::EMPTY;
        bb.grow(a);
        bb.grow(b);
        bb.grow(c);
        bb
    }

    pub fn bounds(&self) -> Aabb {
        let mut bb = Aabb::EMPTY;
        for &v in &self.vertices {
            bb.grow(v);
        }
        bb
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.triangles == other.triangles
    }

    /// Brute-force nearest triangle scan; the oracle for the BVH query.
    /// Ties are broken by the lowest triangle index.
    pub fn nearest_triangle_brute(&self, p: Vec3) -> NearestHit {
        assert!(!self.triangles.is_empty(), "mesh has no triangles");
        let mut best: Option<NearestHit> = None;
        let mut best_sq = f64::INFINITY;
        for tri in 0..self.triangles.len() {
            let [a, b, c] = self.corners(tri);
            let (q, bary) = closest_point_on_triangle(p, a, b, c);
            let d_sq = (p - q).norm_sq();
            // Compare exact squared distances; going through sqrt and back
            // would round and turn exact ties into spurious strict wins.
            if d_sq < best_sq {
                best_sq = d_sq;
                best = Some(NearestHit {
                    tri_index: tri,
                    barycentric: bary,
                    closest_point: q,
                    distance: d_sq.sqrt(),
                });
            }
        }
        best.unwrap()
    }

    /// Interpolates the given triangle by barycentric weights.
    pub fn barycentric_point(&self, tri: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        a * bary[0] + b * bary[1] + c * bary[2]
    }
}

/// Closest point on triangle (a, b, c) to p, with its barycentric coordinates.
///
/// Voronoi-region walk after Ericson, "Real-Time Collision Detection" 5.1.5.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}
