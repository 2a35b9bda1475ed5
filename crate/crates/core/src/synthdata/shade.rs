//! Mesh-based oracle renderer: ray/triangle intersection with a procedural
//! albedo and Lambertian shading. Shares no sampling or compositing code
//! with the volumetric renderer; it is the independent ground truth the
//! avatar is measured against.
//!
//! Albedo is a closed-form function of the canonical surface position p:
//!   r = 0.55 + 0.45 * sin(4 p.x + 2 p.y)
//!   g = 0.55 + 0.45 * sin(4 p.y + 2 p.z + 2)
//!   b = 0.55 + 0.45 * sin(4 p.z + 2 p.x + 4)
//! Shading: albedo * (ambient + (1 - ambient) * max(0, n . l)) with smooth
//! (area-weighted) vertex normals interpolated barycentrically.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{BlendshapeRig, Camera, TriMesh};
use crate::img::ImageRgb;
use crate::math::{vec3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingConfig {
    pub light_dir: Vec3,
    pub ambient: f64,
    pub background: [f64; 3],
}

impl Default for ShadingConfig {
    fn default() -> Self {
        ShadingConfig {
            light_dir: vec3(0.4, 0.6, 1.0),
            ambient: 0.25,
            background: [1.0, 1.0, 1.0],
        }
    }
}

/// Procedural surface albedo, evaluated at the canonical surface position.
pub fn albedo(p: Vec3) -> [f64; 3] {
    [
        0.55 + 0.45 * (4.0 * p.x + 2.0 * p.y).sin(),
        0.55 + 0.45 * (4.0 * p.y + 2.0 * p.z + 2.0).sin(),
        0.55 + 0.45 * (4.0 * p.z + 2.0 * p.x + 4.0).sin(),
    ]
}

/// Area-weighted smooth vertex normals.
pub fn vertex_normals(mesh: &TriMesh) -> Vec<Vec3> {
    let mut normals = vec![Vec3::ZERO; mesh.vertices.len()];
    for tri in &mesh.triangles {
        let [a, b, c] = [
            mesh.vertices[tri[0] as usize],
            mesh.vertices[tri[1] as usize],
            mesh.vertices[tri[2] as usize],
        ];
        let n = (b - a).cross(c - a); // length = 2 * area
        for &i in tri {
            normals[i as usize] += n;
        }
    }
    normals.into_iter().map(|n| n.normalized()).collect()
}

/// Moller-Trumbore ray/triangle intersection; returns (t, u, v).
fn intersect_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t <= 1e-9 {
        return None;
    }
    Some((t, u, v))
}

/// Renders the rig instanced at `expr` from `camera` against the known
/// analytic shading model. The intersection is a plain scan over all
/// triangles, deliberately separate from the BVH used elsewhere.
pub fn ground_truth_render(
    rig: &BlendshapeRig,
    expr: &[f64],
    camera: &Camera,
    shading: &ShadingConfig,
) -> Result<ImageRgb> {
    let mesh = rig.instance(expr)?;
    let normals = vertex_normals(&mesh);
    let light = shading.light_dir.normalized();
    let mut img = ImageRgb::new(camera.width, camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let ray = camera.generate_ray(px, py);
            let mut best: Option<(f64, usize, f64, f64)> = None;
            for (tri_idx, tri) in mesh.triangles.iter().enumerate() {
                let [a, b, c] = [
                    mesh.vertices[tri[0] as usize],
                    mesh.vertices[tri[1] as usize],
                    mesh.vertices[tri[2] as usize],
                ];
                if let Some((t, u, v)) = intersect_triangle(ray.origin, ray.direction, a, b, c) {
                    if best.map_or(true, |(bt, _, _, _)| t < bt) {
                        best = Some((t, tri_idx, u, v));
                    }
                }
            }
            let rgb = match best {
                None => shading.background,
                Some((_, tri_idx, u, v)) => {
                    let bary = [1.0 - u - v, u, v];
                    let tri = mesh.triangles[tri_idx];
                    let mut n = Vec3::ZERO;
                    for k in 0..3 {
                        n += normals[tri[k] as usize] * bary[k];
                    }
                    let n = n.normalized();
                    let p_canon = rig.canonical.barycentric_point(tri_idx, bary);
                    let alb = albedo(p_canon);
                    let shade = shading.ambient + (1.0 - shading.ambient) * n.dot(light).max(0.0);
                    [
                        (alb[0] * shade).clamp(0.0, 1.0),
                        (alb[1] * shade).clamp(0.0, 1.0),
                        (alb[2] * shade).clamp(0.0, 1.0),
                    ]
                }
            };
            img.set_pixel(px, py, rgb);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::make_rig;

    fn front_camera(w: usize, h: usize) -> Camera {
        Camera::look_at(vec3(0.0, 0.0, 3.0), Vec3::ZERO, 1.05 * w as f64, 1.05 * h as f64, w, h)
    }

    fn alpha_mask(img: &ImageRgb, bg: [f64; 3]) -> Vec<bool> {
        (0..img.height)
            .flat_map(|y| (0..img.width).map(move |x| (x, y)))
            .map(|(x, y)| img.pixel(x, y) != bg)
            .collect()
    }

    #[test]
    fn front_and_back_silhouettes_mirror() {
        let rig = make_rig("sphere_head").unwrap();
        let shading = ShadingConfig::default();
        let cam_front = front_camera(32, 32);
        let cam_back = Camera::look_at(vec3(0.0, 0.0, -3.0), Vec3::ZERO, 33.6, 33.6, 32, 32);
        let expr = vec![0.0; 3];
        let front = ground_truth_render(&rig, &expr, &cam_front, &shading).unwrap();
        let back = ground_truth_render(&rig, &expr, &cam_back, &shading).unwrap();
        let mf = alpha_mask(&front, shading.background);
        let mb = alpha_mask(&back, shading.background);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(mf[y * 32 + x], mb[y * 32 + (31 - x)], "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn vertex_hit_matches_hand_shading_formula() {
        let rig = make_rig("sphere_head").unwrap();
        let shading = ShadingConfig::default();
        let cam = front_camera(64, 64);
        // Pick the marker vertex nearest the camera and aim a 1x1 "image"
        // region at it through project().
        let vi = rig.marker_vertices[0] as usize;
        let v = rig.canonical.vertices[vi];
        let (u, pv, _) = cam.project(v).unwrap();
        let (px, py) = (u as usize, pv as usize);
        let img = ground_truth_render(&rig, &[0.0; 3], &cam, &shading).unwrap();
        let got = img.pixel(px, py);
        // The hand formula at the exact vertex; one pixel of discretization
        // means the ray hits near, not exactly at, the vertex.
        let normals = vertex_normals(&rig.canonical);
        let n = normals[vi];
        let l = shading.light_dir.normalized();
        let alb = albedo(v);
        let shade = shading.ambient + (1.0 - shading.ambient) * n.dot(l).max(0.0);
        for c in 0..3 {
            assert!(
                (got[c] - (alb[c] * shade).clamp(0.0, 1.0)).abs() < 0.12,
                "channel {c}: {} vs {}",
                got[c],
                alb[c] * shade
            );
        }
    }

    #[test]
    fn tiny_expression_change_is_continuous() {
        let rig = make_rig("sphere_head").unwrap();
        let cam = front_camera(32, 32);
        let shading = ShadingConfig::default();
        let a = ground_truth_render(&rig, &[0.0; 3], &cam, &shading).unwrap();
        let b = ground_truth_render(&rig, &[1e-6, 1e-6, 1e-6], &cam, &shading).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
