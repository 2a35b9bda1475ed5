//! Plain-text OBJ subset (v/f lines only) for mesh import and export.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::vec3;

use super::mesh::TriMesh;

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for t in &mesh.triangles {
        // OBJ indices are 1-based.
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coord = |what: &str| -> Result<f64> {
                    parts
                        .next()
                        .ok_or_else(|| bad_line(path, lineno, what))?
                        .parse()
                        .map_err(|_| bad_line(path, lineno, what))
                };
                let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                vertices.push(vec3(x, y, z));
            }
            Some("f") => {
                let mut idx = |what: &str| -> Result<u32> {
                    let tok = parts.next().ok_or_else(|| bad_line(path, lineno, what))?;
                    // Tolerate v/vt/vn face syntax, keep only the vertex index.
                    let v: u32 = tok
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| bad_line(path, lineno, what))?;
                    if v == 0 {
                        return Err(bad_line(path, lineno, what));
                    }
                    Ok(v - 1)
                };
                triangles.push([idx("i0")?, idx("i1")?, idx("i2")?]);
                if parts.next().is_some() {
                    return Err(Error::InvalidInput(format!(
                        "{}:{}: only triangle faces are supported",
                        path.display(),
                        lineno + 1
                    )));
                }
            }
            _ => {} // comments and unknown records ignored
        }
    }
    TriMesh::new(vertices, triangles)
}

fn bad_line(path: &Path, lineno: usize, what: &str) -> Error {
    Error::InvalidInput(format!(
        "{}:{}: malformed {what} field",
        path.display(),
        lineno + 1
    ))
}
