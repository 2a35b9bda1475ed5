//! Deformed-space to canonical-space point mapping.
//!
//! A query point is transported by its nearest triangle on the deformed
//! mesh: the barycentric foot point moves to the corresponding canonical
//! triangle and the offset is rotated between the two triangle frames.
//! Points further than `influence_radius` from the deformed surface are
//! reported invalid and treated as empty space by the renderer.

use crate::error::{Error, Result};
use crate::geometry::{MeshBvh, TriMesh};
use crate::math::{Mat3, Vec3};

pub const DEFAULT_INFLUENCE_RADIUS: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct DeformationContext {
    pub deformed: TriMesh,
    pub canonical: TriMesh,
    frames_deformed: Vec<Mat3>,
    frames_canonical: Vec<Mat3>,
    bvh: MeshBvh,
    pub influence_radius: f64,
}

/// Orthonormal frame of a triangle: column 0 along the first edge,
/// column 2 the unit normal, column 1 their cross product. Deterministic
/// and consistent across meshes of shared topology.
fn triangle_frame(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
    let e = (b - a).normalized();
    let n = (b - a).cross(c - a).normalized();
    Mat3::from_cols(e, n.cross(e), n)
}

impl DeformationContext {
    pub fn new(deformed: TriMesh, canonical: TriMesh, influence_radius: f64) -> Result<DeformationContext> {
        if !deformed.same_topology(&canonical) {
            return Err(Error::InvalidInput(
                "deformed and canonical meshes must share topology".into(),
            ));
        }
        if influence_radius <= 0.0 {
            return Err(Error::InvalidInput("influence radius must be positive".into()));
        }
        let frames = |mesh: &TriMesh| -> Vec<Mat3> {
            (0..mesh.triangles.len())
                .map(|t| {
                    let [a, b, c] = mesh.corners(t);
                    triangle_frame(a, b, c)
                })
                .collect()
        };
        let frames_deformed = frames(&deformed);
        let frames_canonical = frames(&canonical);
        debug_assert!(frames_deformed
            .iter()
            .chain(&frames_canonical)
            .all(|f| f.orthonormality_error() < 1e-9));
        let bvh = MeshBvh::build(&deformed);
        Ok(DeformationContext {
            deformed,
            canonical,
            frames_deformed,
            frames_canonical,
            bvh,
            influence_radius,
        })
    }

    /// Maps `p` from deformed space to canonical space. `valid` is false
    /// when `p` lies outside the influence shell around the deformed mesh.
    pub fn canonical_map(&self, p: Vec3) -> (Vec3, bool) {
        let hit = self.bvh.nearest(&self.deformed, p);
        let q_canon = self.canonical.barycentric_point(hit.tri_index, hit.barycentric);
        let frame_d = self.frames_deformed[hit.tri_index];
        let frame_c = self.frames_canonical[hit.tri_index];
        let offset = frame_c * (frame_d.transpose() * (p - hit.closest_point));
        (q_canon + offset, hit.distance <= self.influence_radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::synthdata::make_rig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
        vec3(
            rng.gen_range(-r..r),
            rng.gen_range(-r..r),
            rng.gen_range(-r..r),
        )
    }

    #[test]
    fn identity_meshes_give_identity_map() {
        let mesh = make_rig("sphere_head").unwrap().canonical;
        let ctx = DeformationContext::new(mesh.clone(), mesh, DEFAULT_INFLUENCE_RADIUS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 1000 {
            let p = random_point(&mut rng, 1.2);
            let (q, valid) = ctx.canonical_map(p);
            if !valid {
                continue;
            }
            assert!((q - p).norm() < 1e-12, "p={p:?} q={q:?}");
            checked += 1;
        }
    }

    #[test]
    fn rigid_transform_is_inverted() {
        let rig = make_rig("sphere_head").unwrap();
        let canonical = rig.canonical.clone();
        let rot = Mat3::rot_y(0.6) * Mat3::rot_x(-0.25);
        let t = vec3(0.1, -0.2, 0.05);
        let deformed = TriMesh {
            vertices: canonical.vertices.iter().map(|&v| rot * v + t).collect(),
            triangles: canonical.triangles.clone(),
        };
        let ctx = DeformationContext::new(deformed, canonical, DEFAULT_INFLUENCE_RADIUS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut checked = 0;
        while checked < 300 {
            let p = random_point(&mut rng, 1.4);
            let (q, valid) = ctx.canonical_map(p);
            if !valid {
                continue;
            }
            let expect = rot.transpose() * (p - t);
            assert!((q - expect).norm() < 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn deformed_vertex_maps_to_canonical_vertex() {
        let rig = make_rig("sphere_head").unwrap();
        let deformed = rig.instance(&[0.8, -0.4, 0.6]).unwrap();
        let ctx =
            DeformationContext::new(deformed.clone(), rig.canonical.clone(), DEFAULT_INFLUENCE_RADIUS)
                .unwrap();
        for i in (0..deformed.vertices.len()).step_by(37) {
            let (q, valid) = ctx.canonical_map(deformed.vertices[i]);
            assert!(valid);
            assert!((q - rig.canonical.vertices[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn surface_points_map_onto_canonical_surface() {
        let rig = make_rig("sphere_head").unwrap();
        let deformed = rig.instance(&[0.5, 0.3, -0.7]).unwrap();
        let ctx =
            DeformationContext::new(deformed.clone(), rig.canonical.clone(), DEFAULT_INFLUENCE_RADIUS)
                .unwrap();
        let canon_bvh = MeshBvh::build(&rig.canonical);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let tri = rng.gen_range(0..deformed.triangles.len());
            let (mut u, mut v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = deformed.barycentric_point(tri, [1.0 - u - v, u, v]);
            let (q, valid) = ctx.canonical_map(p);
            assert!(valid);
            let hit = canon_bvh.nearest(&rig.canonical, q);
            assert!(hit.distance < 1e-9, "residual {}", hit.distance);
        }
    }

    #[test]
    fn continuity_probe_across_cells() {
        let rig = make_rig("sphere_head").unwrap();
        let deformed = rig.instance(&[0.6, -0.5, 0.4]).unwrap();
        let ctx =
            DeformationContext::new(deformed, rig.canonical.clone(), DEFAULT_INFLUENCE_RADIUS).unwrap();
        let deformed = &ctx.deformed;
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut probes = 0;
        while probes < 50 {
            // Near-surface start: a random surface point plus a small offset.
            let tri = rng.gen_range(0..deformed.triangles.len());
            let (mut u, mut v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let start = deformed.barycentric_point(tri, [1.0 - u - v, u, v])
                + random_point(&mut rng, 1.0).normalized() * rng.gen_range(0.0..0.03);
            let dir = random_point(&mut rng, 1.0).normalized();
            let step = 1e-3;
            let mut prev: Option<Vec3> = None;
            let mut ok = true;
            for k in 0..20 {
                let p = start + dir * (step * k as f64);
                let (q, valid) = ctx.canonical_map(p);
                if !valid {
                    ok = false;
                    break;
                }
                if let Some(prev) = prev {
                    assert!(
                        (q - prev).norm() <= 10.0 * step,
                        "jump {} at step {k}",
                        (q - prev).norm()
                    );
                }
                prev = Some(q);
            }
            if ok {
                probes += 1;
            }
        }
    }
}
