//! Blendshape rig: a canonical mesh plus additive vertex-offset shapes
//! driven by expression coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::mesh::TriMesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendshapeRig {
    pub canonical: TriMesh,
    /// Per-shape vertex offsets, each the same length as `canonical.vertices`.
    pub deltas: Vec<Vec<Vec3>>,
    /// Vertex indices used as keypoints by the evaluation metrics.
    pub marker_vertices: Vec<u32>,
}

impl BlendshapeRig {
    pub fn new(
        canonical: TriMesh,
        deltas: Vec<Vec<Vec3>>,
        marker_vertices: Vec<u32>,
    ) -> Result<BlendshapeRig> {
        let rig = BlendshapeRig {
            canonical,
            deltas,
            marker_vertices,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        self.canonical.validate()?;
        if self.deltas.is_empty() {
            return Err(Error::InvalidInput("rig needs at least one blendshape".into()));
        }
        let nv = self.canonical.vertices.len();
        for (d, delta) in self.deltas.iter().enumerate() {
            if delta.len() != nv {
                return Err(Error::InvalidInput(format!(
                    "blendshape {d} has {} offsets, expected {nv}",
                    delta.len()
                )));
            }
        }
        let nv = nv as u32;
        if self.marker_vertices.iter().any(|&m| m >= nv) {
            return Err(Error::InvalidInput("marker vertex index out of range".into()));
        }
        Ok(())
    }

    /// Number of expression dimensions.
    pub fn dims(&self) -> usize {
        self.deltas.len()
    }

    /// Instances the rig at expression coefficients `expr`:
    /// vertices = canonical + sum_d expr[d] * deltas[d]. Topology is shared.
    pub fn instance(&self, expr: &[f64]) -> Result<TriMesh> {
        if expr.len() != self.dims() {
            return Err(Error::InvalidInput(format!(
                "expression has {} coefficients, rig has {}",
                expr.len(),
                self.dims()
            )));
        }
        let mut vertices = self.canonical.vertices.clone();
        for (coeff, delta) in expr.iter().zip(&self.deltas) {
            if *coeff == 0.0 {
                continue;
            }
            for (v, d) in vertices.iter_mut().zip(delta) {
                *v += *d * *coeff;
            }
        }
        Ok(TriMesh {
            vertices,
            triangles: self.canonical.triangles.clone(),
        })
    }
}
