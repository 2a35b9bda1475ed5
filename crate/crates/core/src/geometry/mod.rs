//! Cameras, rays, triangle meshes, blendshape rigs and nearest-triangle
//! queries. Everything here is immutable after construction and safe to
//! share across threads.

mod bvh;
mod camera;
mod mesh;
mod obj;
mod rig;

pub use bvh::MeshBvh;
pub use camera::{Camera, Ray};
pub use mesh::{closest_point_on_triangle, NearestHit, TriMesh};
pub use obj::{read_obj, write_obj};
pub use rig::BlendshapeRig;

/// The renderer's fixed scene bounding box. The canonical head is expected
/// to fit in [-1, 1]^3; the box adds margin so rays sample a shell around it.
pub const SCENE_HALF_EXTENT: f64 = 1.2;

pub fn scene_bounds() -> crate::math::Aabb {
    crate::math::Aabb::cube(SCENE_HALF_EXTENT)
}
