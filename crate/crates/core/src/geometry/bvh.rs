//! Static axis-aligned BVH over a triangle mesh for nearest-point queries.
//!
//! Built once per mesh instance by median split on the longest axis.
//! Ties between equidistant triangles are broken by the lowest triangle
//! index, matching the brute-force oracle exactly.

use crate::math::{Aabb, Vec3};

use super::mesh::{closest_point_on_triangle, NearestHit, TriMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        bounds: Aabb,
        // Range into `tri_order`.
        start: usize,
        end: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct MeshBvh {
    nodes: Vec<Node>,
    tri_order: Vec<u32>,
    root: usize,
}

impl MeshBvh {
    pub fn build(mesh: &TriMesh) -> MeshBvh {
        assert!(!mesh.triangles.is_empty(), "mesh has no triangles");
        let mut tri_order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::new();
        let n = tri_order.len();
        let root = build_node(mesh, &centroids, &mut tri_order, 0, n, &mut nodes);
        MeshBvh { nodes, tri_order, root }
    }

    /// Nearest point on the mesh to `p`. Equal to the brute-force scan,
    /// including the lowest-index tie break.
    pub fn nearest(&self, mesh: &TriMesh, p: Vec3) -> NearestHit {
        let mut best = NearestHit {
            tri_index: usize::MAX,
            barycentric: [0.0; 3],
            closest_point: Vec3::ZERO,
            distance: f64::INFINITY,
        };
        let mut best_sq = f64::INFINITY;
        self.visit(self.root, mesh, p, &mut best, &mut best_sq);
        best
    }

    fn visit(&self, node: usize, mesh: &TriMesh, p: Vec3, best: &mut NearestHit, best_sq: &mut f64) {
        match &self.nodes[node] {
            Node::Leaf { start, end, .. } => {
                for &tri in &self.tri_order[*start..*end] {
                    let tri = tri as usize;
                    let [a, b, c] = mesh.corners(tri);
                    let (q, bary) = closest_point_on_triangle(p, a, b, c);
                    let d_sq = (p - q).norm_sq();
                    // Strictly closer wins; exact ties go to the lower index.
                    if d_sq < *best_sq || (d_sq == *best_sq && tri < best.tri_index) {
                        *best_sq = d_sq;
                        *best = NearestHit {
                            tri_index: tri,
                            barycentric: bary,
                            closest_point: q,
                            distance: d_sq.sqrt(),
                        };
                    }
                }
            }
            Node::Inner { left, right, .. } => {
                let dl = self.node_bounds(*left).dist_sq(p);
                let dr = self.node_bounds(*right).dist_sq(p);
                // Visit the nearer child first; prune only strictly worse
                // boxes so equidistant ties are still examined.
                let (first, d_first, second, d_second) = if dl <= dr {
                    (*left, dl, *right, dr)
                } else {
                    (*right, dr, *left, dl)
                };
                if d_first <= *best_sq {
                    self.visit(first, mesh, p, best, best_sq);
                }
                if d_second <= *best_sq {
                    self.visit(second, mesh, p, best, best_sq);
                }
            }
        }
    }

    fn node_bounds(&self, node: usize) -> &Aabb {
        match &self.nodes[node] {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

fn build_node(
    mesh: &TriMesh,
    centroids: &[Vec3],
    tri_order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::EMPTY;
    for &t in &tri_order[start..end] {
        bounds.merge(&mesh.triangle_aabb(t as usize));
    }
    if end - start <= LEAF_SIZE {
        // Leaf triangles are kept sorted so tie-breaking scans lowest first.
        tri_order[start..end].sort_unstable();
        nodes.push(Node::Leaf { bounds, start, end });
        return nodes.len() - 1;
    }

    let ext = bounds.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    tri_order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });

    let left = build_node(mesh, centroids, tri_order, start, mid, nodes);
    let right = build_node(mesh, centroids, tri_order, mid, end, nodes);
    nodes.push(Node::Inner { bounds, left, right });
    nodes.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::synthdata::make_rig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vertex_hit_has_zero_distance() {
        let mesh = make_rig("sphere_head").unwrap().canonical;
        let bvh = MeshBvh::build(&mesh);
        let v = mesh.vertices[17];
        let hit = bvh.nearest(&mesh, v);
        assert!(hit.distance < 1e-12);
        let one_hot = hit.barycentric.iter().filter(|&&w| (w - 1.0).abs() < 1e-9).count();
        assert_eq!(one_hot, 1);
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mesh = make_rig("sphere_head").unwrap().canonical;
        let bvh = MeshBvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = vec3(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let fast = bvh.nearest(&mesh, p);
            let slow = mesh.nearest_triangle_brute(p);
            assert_eq!(fast.tri_index, slow.tri_index, "point {p:?}");
            assert!((fast.distance - slow.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn point_above_triangle_interior() {
        let mesh = TriMesh::new(
            vec![vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = MeshBvh::build(&mesh);
        let hit = bvh.nearest(&mesh, vec3(0.2, 0.2, 0.5));
        assert!((hit.distance - 0.5).abs() < 1e-12);
        assert!((hit.closest_point - vec3(0.2, 0.2, 0.0)).norm() < 1e-12);
    }
}
