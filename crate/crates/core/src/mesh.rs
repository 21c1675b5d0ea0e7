//! Triangle meshes for robot link shapes, and a Wavefront OBJ reader.

use nalgebra::Vector3;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::se3::Pose;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Validation("mesh has no triangles".into()));
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Validation(format!("non-finite vertex {v:?}")));
        }
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::Validation(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    /// Axis-aligned box with the given center and edge lengths (12 triangles).
    pub fn cuboid(center: Vector3<f64>, size: Vector3<f64>) -> Self {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
                center + Vector3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z)
            })
            .collect();
        #[rustfmt::skip]
        let triangles = vec![
            [0, 2, 3], [0, 3, 1], // -z
            [4, 5, 7], [4, 7, 6], // +z
            [0, 1, 5], [0, 5, 4], // -y
            [2, 6, 7], [2, 7, 3], // +y
            [0, 4, 6], [0, 6, 2], // -x
            [1, 3, 7], [1, 7, 5], // +x
        ];
        TriangleMesh {
            vertices,
            triangles,
        }
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn transformed(&self, t: &Pose) -> TriangleMesh {
        transform_mesh(self, t)
    }
}

pub fn transform_mesh(m: &TriangleMesh, t: &Pose) -> TriangleMesh {
    TriangleMesh {
        vertices: m.vertices.iter().map(|v| t.apply(v)).collect(),
        triangles: m.triangles.clone(),
    }
}

/// Centroid of the vertices and the largest vertex distance from it.
pub fn bounding_sphere(m: &TriangleMesh) -> (Vector3<f64>, f64) {
    let n = m.vertices.len() as f64;
    let center = m.vertices.iter().fold(Vector3::zeros(), |acc, v| acc + v) / n;
    let radius = m
        .vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0, f64::max);
    (center, radius)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(file)
}

/// Parses the `v`/`f` subset of Wavefront OBJ.
///
/// Polygons are fan-triangulated; negative indices count back from the last
/// vertex read so far. Other statements are skipped with a warning.
pub fn parse_obj(reader: impl Read) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut warned: Vec<String> = Vec::new();

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        match keyword {
            "v" => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("bad vertex coordinate: {e}"),
                    })?;
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("vertex needs 3 coordinates, got {}", coords.len()),
                    });
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx = tokens
                    .map(|t| resolve_index(t, vertices.len(), lineno))
                    .collect::<Result<Vec<usize>>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "face needs at least 3 vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            other => {
                if !warned.iter().any(|w| w == other) {
                    log::warn!("OBJ line {lineno}: ignoring unsupported statement '{other}'");
                    warned.push(other.to_string());
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}

fn resolve_index(token: &str, n_vertices: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad face index '{token}'"),
    })?;
    let resolved = match raw {
        0 => {
            return Err(Error::Parse {
                line,
                message: "face index 0 is not valid in OBJ".into(),
            })
        }
        r if r > 0 => r - 1,
        r => n_vertices as i64 + r,
    };
    // Positive indices past the end are caught by `TriangleMesh::new`.
    if resolved < 0 {
        return Err(Error::Validation(format!(
            "line {line}: face index {raw} out of range ({n_vertices} vertices)"
        )));
    }
    Ok(resolved as usize)
}
