//! Pinhole projection and silhouette rasterization.
//!
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` in image coordinates, so its
//! center sits at `(i + 0.5, j + 0.5)`. Camera frames follow the usual
//! computer-vision convention: `z` forward, `x` right, `y` down.

mod mask;
mod soft;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub use mask::Mask;
pub use soft::{render_soft_mask, LinkGeometry, SoftRaster, DEFAULT_SIGMA, SOFT_CUTOFF};

/// Triangles with a normalized area below this are skipped.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    0.05
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, near: f64) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and a focal length of `0.8 * width`.
    pub fn default_for(width: usize, height: usize) -> Self {
        let f = 0.8 * width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: default_near(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive and finite ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidArgument(format!(
                "image must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        if self.near <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "near plane must be positive, got {}",
                self.near
            )));
        }
        Ok(())
    }

    /// The same camera resampled to a `width x height` image.
    pub fn scaled_to(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            near: self.near,
        }
    }

    /// Image diagonal in pixels; soft-rasterizer distances are divided by it.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

pub fn project_point(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    if p.z <= k.near {
        return Err(Error::BehindCamera { z: p.z, near: k.near });
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// 2D cross product `(b - a) x (p - a)`.
#[inline]
pub(crate) fn edge_fn(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Distance from `pixel` to the boundary of triangle `tri`, normalized by
/// `diagonal`, and whether the pixel is inside.
///
/// Degenerate triangles yield [`Error::Degenerate`]; rasterizers skip them.
pub fn boundary_distance(
    pixel: &Vector2<f64>,
    tri: &[Vector2<f64>; 3],
    diagonal: f64,
) -> Result<(f64, bool)> {
    let area = 0.5 * edge_fn(&tri[0], &tri[1], &tri[2]).abs() / (diagonal * diagonal);
    if !(area > DEGENERATE_AREA) {
        return Err(Error::Degenerate(format!("triangle area {area:.3e}")));
    }
    let mut d2 = f64::INFINITY;
    let mut signs = [0.0; 3];
    for k in 0..3 {
        let (a, b) = (&tri[k], &tri[(k + 1) % 3]);
        signs[k] = edge_fn(a, b, pixel);
        let ab = b - a;
        let t = ((pixel - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        d2 = d2.min((pixel - (a + ab * t)).norm_squared());
    }
    let inside = signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0);
    Ok((d2.sqrt() / diagonal, inside))
}

/// Binary silhouette: a pixel is set iff its center lies in any projected
/// triangle. Triangles with a vertex at or behind the near plane are dropped.
pub fn render_hard_mask(links_cam: &[TriangleMesh], k: &CameraIntrinsics) -> Mask {
    let (w, h) = (k.width, k.height);
    let mut data = vec![0.0; w * h];
    let mut dropped = 0usize;
    for mesh in links_cam {
        let projected: Vec<Option<Vector2<f64>>> = mesh
            .vertices()
            .iter()
            .map(|v| project_point(k, v).ok())
            .collect();
        for tri in mesh.triangles() {
            let (Some(a), Some(b), Some(c)) =
                (projected[tri[0]], projected[tri[1]], projected[tri[2]])
            else {
                dropped += 1;
                continue;
            };
            fill_triangle(&mut data, w, h, a, b, c);
        }
    }
    if dropped > 0 {
        log::debug!("hard render: dropped {dropped} triangles crossing the near plane");
    }
    Mask::from_raw(w, h, data)
}

/// Edge-function fill with the top-left rule.
fn fill_triangle(
    data: &mut [f64],
    w: usize,
    h: usize,
    a: Vector2<f64>,
    b: Vector2<f64>,
    c: Vector2<f64>,
) {
    let area2 = edge_fn(&a, &b, &c);
    if area2 == 0.0 {
        return;
    }
    let (a, b, c) = if area2 > 0.0 { (a, b, c) } else { (a, c, b) };
    let verts = [a, b, c];
    let top_left = |p: &Vector2<f64>, q: &Vector2<f64>| {
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        dy < 0.0 || (dy == 0.0 && dx > 0.0)
    };
    let tl = [top_left(&a, &b), top_left(&b, &c), top_left(&c, &a)];

    let min_x = a.x.min(b.x).min(c.x);
    let max_x = a.x.max(b.x).max(c.x);
    let min_y = a.y.min(b.y).min(c.y);
    let max_y = a.y.max(b.y).max(c.y);
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    if max_x < 0.5 || max_y < 0.5 {
        return;
    }
    let x1 = ((max_x - 0.5).floor() as usize + 1).min(w);
    let y1 = ((max_y - 0.5).floor() as usize + 1).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..3).all(|k| {
                let e = edge_fn(&verts[k], &verts[(k + 1) % 3], &p);
                e > 0.0 || (e == 0.0 && tl[k])
            });
            if inside {
                data[y * w + x] = 1.0;
            }
        }
    }
}
