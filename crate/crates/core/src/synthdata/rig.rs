//! Procedural head rigs: a subdivided icosphere with three analytic
//! blendshapes and marker vertices for the keypoint metric.
//!
//! Blendshape formulas (unit-sphere vertex v, canonical radius 1):
//!   jaw-stretch:  delta = (0, -0.25 * max(0, -v.y)^2, 0)
//!   cheek-bulge:  delta = normalize(v) * 0.15 * max(0, 1 - (v.y / 0.35)^2)
//!   brow-lift:    delta = (0, 0.12 * max(0, 1 - ((v.y - 0.5) / 0.25)^2), 0)
//! The ellipsoid preset scales the sphere by (0.8, 1.0, 0.9) after the
//! deltas are computed on the unit sphere.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{BlendshapeRig, TriMesh};
use crate::math::{vec3, Vec3};

pub const JAW_AMPLITUDE: f64 = 0.25;
pub const CHEEK_AMPLITUDE: f64 = 0.15;
pub const CHEEK_BAND: f64 = 0.35;
pub const BROW_AMPLITUDE: f64 = 0.12;
pub const BROW_CENTER: f64 = 0.5;
pub const BROW_BAND: f64 = 0.25;

pub fn jaw_weight(y: f64) -> f64 {
    let t = (-y).max(0.0);
    t * t
}

pub fn cheek_weight(y: f64) -> f64 {
    (1.0 - (y / CHEEK_BAND) * (y / CHEEK_BAND)).max(0.0)
}

pub fn brow_weight(y: f64) -> f64 {
    let t = (y - BROW_CENTER) / BROW_BAND;
    (1.0 - t * t).max(0.0)
}

/// Builds a rig preset. `sphere_head` is a unit icosphere with 1280
/// triangles; `ellipsoid_face` is the same sphere scaled anisotropically.
pub fn make_rig(preset: &str) -> Result<BlendshapeRig> {
    let scale = match preset {
        "sphere_head" => vec3(1.0, 1.0, 1.0),
        "ellipsoid_face" => vec3(0.8, 1.0, 0.9),
        other => {
            return Err(Error::InvalidInput(format!("unknown rig preset '{other}'")))
        }
    };
    let sphere = icosphere(3);

    let deltas: Vec<Vec<Vec3>> = vec![
        sphere
            .vertices
            .iter()
            .map(|v| vec3(0.0, -JAW_AMPLITUDE * jaw_weight(v.y), 0.0))
            .collect(),
        sphere
            .vertices
            .iter()
            .map(|v| v.normalized() * (CHEEK_AMPLITUDE * cheek_weight(v.y)))
            .collect(),
        sphere
            .vertices
            .iter()
            .map(|v| vec3(0.0, BROW_AMPLITUDE * brow_weight(v.y), 0.0))
            .collect(),
    ];

    // Markers: vertices nearest to a fixed fan of face-like directions on
    // the forward (+z) hemisphere.
    let marker_dirs = [
        vec3(0.0, 0.0, 1.0),
        vec3(0.35, 0.25, 0.9),
        vec3(-0.35, 0.25, 0.9),
        vec3(0.5, -0.2, 0.85),
        vec3(-0.5, -0.2, 0.85),
        vec3(0.0, 0.55, 0.8),
        vec3(0.0, -0.55, 0.8),
        vec3(0.25, -0.45, 0.85),
        vec3(-0.25, -0.45, 0.85),
        vec3(0.0, -0.25, 0.95),
    ];
    let mut markers = Vec::new();
    for dir in marker_dirs {
        let dir = dir.normalized();
        let best = sphere
            .vertices
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.dot(dir).partial_cmp(&b.dot(dir)).unwrap())
            .map(|(i, _)| i as u32)
            .unwrap();
        if !markers.contains(&best) {
            markers.push(best);
        }
    }

    let canonical = TriMesh {
        vertices: sphere
            .vertices
            .iter()
            .map(|v| vec3(v.x * scale.x, v.y * scale.y, v.z * scale.z))
            .collect(),
        triangles: sphere.triangles,
    };
    // Deltas computed on the unit sphere are scaled the same way so the
    // rig stays consistent under the preset's anisotropy.
    let deltas = deltas
        .into_iter()
        .map(|shape| {
            shape
                .into_iter()
                .map(|d| vec3(d.x * scale.x, d.y * scale.y, d.z * scale.z))
                .collect()
        })
        .collect();

    BlendshapeRig::new(canonical, deltas, markers)
}

/// Unit icosphere: icosahedron subdivided `levels` times, vertices
/// re-projected to the unit sphere at every step.
fn icosphere(levels: usize) -> TriMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| vec3(x, y, z).normalized())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..levels {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mut mids = [0u32; 3];
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a as usize] + vertices[b as usize]) * 0.5).normalized();
                    vertices.push(m);
                    (vertices.len() - 1) as u32
                });
            }
            next.push([tri[0], mids[0], mids[2]]);
            next.push([tri[1], mids[1], mids[0]]);
            next.push([tri[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        triangles = next;
    }

    TriMesh { vertices, triangles }
}
