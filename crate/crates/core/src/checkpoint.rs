//! Avatar checkpoints: a binary container with magic `OPHA`, a format
//! version, a TOML metadata header (configs, provenance, config echo) and
//! raw little-endian f64 payloads for the trainable parameters and rig
//! geometry. Saving is deterministic, so save -> load -> save is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldMlp};
use crate::geometry::{BlendshapeRig, TriMesh};
use crate::hashenc::{HashGrid, HashGridConfig};
use crate::math::Vec3;
use crate::render::RenderConfig;
use crate::trainer::{Avatar, Provenance};

pub const MAGIC: &[u8; 4] = b"OPHA";
pub const VERSION: u32 = 1;

/// TOML header embedded in the checkpoint.
#[derive(Serialize, Deserialize)]
struct Header {
    grid: HashGridConfig,
    field: FieldConfig,
    render: RenderConfig,
    influence_radius: f64,
    provenance: Provenance,
    /// Free-form echo of the run configuration that produced this avatar.
    config_echo: String,
    marker_vertices: Vec<u32>,
    blendshape_count: usize,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn vec3s(&mut self, vs: &[Vec3]) {
        self.u64(vs.len() as u64);
        for v in vs {
            for c in v.to_array() {
                self.buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }

    fn tris(&mut self, ts: &[[u32; 3]]) {
        self.u64(ts.len() as u64);
        for t in ts {
            for &i in t {
                self.buf.extend_from_slice(&i.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated checkpoint",
                self.path
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn vec3s(&mut self) -> Result<Vec<Vec3>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 24)?;
        Ok(raw
            .chunks_exact(24)
            .map(|c| {
                Vec3::from_array([
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    f64::from_le_bytes(c[16..24].try_into().unwrap()),
                ])
            })
            .collect())
    }

    fn tris(&mut self) -> Result<Vec<[u32; 3]>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 12)?;
        Ok(raw
            .chunks_exact(12)
            .map(|c| {
                [
                    u32::from_le_bytes(c[0..4].try_into().unwrap()),
                    u32::from_le_bytes(c[4..8].try_into().unwrap()),
                    u32::from_le_bytes(c[8..12].try_into().unwrap()),
                ]
            })
            .collect())
    }
}

/// Serializes an avatar plus a free-form config echo.
pub fn save_avatar(avatar: &Avatar, config_echo: &str, path: &Path) -> Result<()> {
    let header = Header {
        grid: avatar.grid.config,
        field: avatar.mlp.config,
        render: avatar.render,
        influence_radius: avatar.influence_radius,
        provenance: avatar.provenance.clone(),
        config_echo: config_echo.to_string(),
        marker_vertices: avatar.rig.marker_vertices.clone(),
        blendshape_count: avatar.rig.deltas.len(),
    };
    let header_toml = toml::to_string(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&VERSION.to_le_bytes());
    w.u64(header_toml.len() as u64);
    w.buf.extend_from_slice(header_toml.as_bytes());
    w.f64s(&avatar.grid.tables);
    w.f64s(&avatar.mlp.params);
    w.vec3s(&avatar.rig.canonical.vertices);
    w.tris(&avatar.rig.canonical.triangles);
    for shape in &avatar.rig.deltas {
        w.vec3s(shape);
    }
    std::fs::write(path, w.buf).map_err(|e| Error::io(path, e))
}

/// Loads an avatar; returns it together with the stored config echo.
pub fn load_avatar(path: &Path) -> Result<(Avatar, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not an avatar checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let header_len = r.u64()? as usize;
    let header_raw = r.take(header_len)?;
    let header_str = std::str::from_utf8(header_raw)
        .map_err(|_| Error::Checkpoint(format!("{}: header is not UTF-8", path.display())))?;
    let header: Header = toml::from_str(header_str)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;

    let tables = r.f64s()?;
    let params = r.f64s()?;
    let vertices = r.vec3s()?;
    let triangles = r.tris()?;
    let mut deltas = Vec::with_capacity(header.blendshape_count);
    for _ in 0..header.blendshape_count {
        deltas.push(r.vec3s()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }

    let grid = HashGrid::from_tables(header.grid, tables)?;
    let mlp = FieldMlp::from_params(header.field, params)?;
    let canonical = TriMesh::new(vertices, triangles)?;
    let rig = BlendshapeRig::new(canonical, deltas, header.marker_vertices)?;
    header.render.validate()?;
    let avatar = Avatar {
        grid,
        mlp,
        rig,
        render: header.render,
        influence_radius: header.influence_radius,
        provenance: header.provenance,
    };
    Ok((avatar, header.config_echo))
}
