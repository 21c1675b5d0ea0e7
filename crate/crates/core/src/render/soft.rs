//! Soft silhouette rasterizer with an analytic backward pass.
//!
//! For a pixel `p` and triangle `f` the occupancy is
//! `D_f(p) = sigmoid(sign * d(p, f)^2 / sigma)`, where `d` is the screen-space
//! distance from the pixel center to the triangle boundary divided by the
//! image diagonal and `sign` is `+1` inside, `-1` outside. Each link
//! aggregates its faces as `S_l = 1 - prod_f (1 - D_f)` and the image is
//! `min(1, sum_l S_l)`.
//!
//! The per-link products are accumulated in log space,
//! `log q_l = -sum_f softplus(s_f)`, which keeps `dS_l / ds_f = q_l * D_f`
//! exact even when a single factor underflows.

use nalgebra::{Vector2, Vector3};

use super::{edge_fn, project_point, CameraIntrinsics, Mask, DEGENERATE_AREA};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::par;

/// Default temperature. The sigmoid transition is about 0.1 px wide at
/// 320x240, which keeps the soft silhouette's bias against hard masks small
/// while still converging from a 10 degree start.
pub const DEFAULT_SIGMA: f64 = 1e-7;

/// Outside pixels with `d^2 / sigma` above this are treated as exactly
/// empty (`D_f < 1.4e-11`), in both the forward and backward pass.
pub const SOFT_CUTOFF: f64 = 25.0;

/// Camera-frame vertices and triangles of one link.
#[derive(Clone, Copy, Debug)]
pub struct LinkGeometry<'a> {
    pub vertices: &'a [Vector3<f64>],
    pub triangles: &'a [[usize; 3]],
}

impl<'a> From<&'a TriangleMesh> for LinkGeometry<'a> {
    fn from(m: &'a TriangleMesh) -> Self {
        LinkGeometry {
            vertices: m.vertices(),
            triangles: m.triangles(),
        }
    }
}

#[inline]
fn softplus(s: f64) -> f64 {
    if s > 40.0 {
        s
    } else if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// A projected triangle in canonical (positive-area) orientation.
struct Face {
    idx: [usize; 3],
    p: [Vector2<f64>; 3],
    ab: [Vector2<f64>; 3],
    inv_len2: [f64; 3],
    rows: (usize, usize),
}

/// Distance sample of one pixel against one face.
struct Sample {
    s: f64,
    edge: usize,
    t: f64,
    /// Closest boundary point minus pixel center.
    diff: Vector2<f64>,
}

impl Face {
    fn new(
        idx: [usize; 3],
        p: [Vector2<f64>; 3],
        margin: f64,
        height: usize,
    ) -> Option<Face> {
        let area2 = edge_fn(&p[0], &p[1], &p[2]);
        let (idx, p) = if area2 >= 0.0 {
            (idx, p)
        } else {
            ([idx[0], idx[2], idx[1]], [p[0], p[2], p[1]])
        };
        let ab = [p[1] - p[0], p[2] - p[1], p[0] - p[2]];
        let inv_len2 = [
            1.0 / ab[0].norm_squared(),
            1.0 / ab[1].norm_squared(),
            1.0 / ab[2].norm_squared(),
        ];
        let min_y = p[0].y.min(p[1].y).min(p[2].y);
        let max_y = p[0].y.max(p[1].y).max(p[2].y);
        let lo = (min_y - margin - 0.5).ceil().max(0.0);
        let hi = (max_y + margin - 0.5).floor();
        if hi < 0.0 || lo >= height as f64 {
            return None;
        }
        let rows = (lo as usize, (hi as usize + 1).min(height));
        Some(Face {
            idx,
            p,
            ab,
            inv_len2,
            rows,
        })
    }

    /// Pixel columns whose centers may lie within `margin` of the triangle
    /// on the row centered at `yc`.
    #[inline]
    fn row_span(&self, yc: f64, margin: f64, width: usize) -> Option<(usize, usize)> {
        let (lo, hi) = (yc - margin, yc + margin);
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        for k in 0..3 {
            let a = self.p[k];
            if a.y >= lo && a.y <= hi {
                xmin = xmin.min(a.x);
                xmax = xmax.max(a.x);
            }
            let b = self.p[(k + 1) % 3];
            for yb in [lo, hi] {
                if (a.y - yb) * (b.y - yb) < 0.0 {
                    let x = a.x + (yb - a.y) * (b.x - a.x) / (b.y - a.y);
                    xmin = xmin.min(x);
                    xmax = xmax.max(x);
                }
            }
        }
        if xmin > xmax {
            return None;
        }
        let x0 = (xmin - margin - 0.5).ceil().max(0.0);
        let x1 = (xmax + margin - 0.5).floor();
        if x1 < 0.0 || x0 >= width as f64 {
            return None;
        }
        Some((x0 as usize, (x1 as usize + 1).min(width)))
    }

    /// Signed scaled squared distance, or `None` when culled.
    #[inline]
    fn signed_z(&self, px: f64, py: f64, inv_scale: f64) -> Option<f64> {
        let mut inside = true;
        for k in 0..3 {
            let a = self.p[k];
            let ab = self.ab[k];
            let e = ab.x * (py - a.y) - ab.y * (px - a.x);
            if e < 0.0 {
                inside = false;
                if e * e * self.inv_len2[k] * inv_scale > SOFT_CUTOFF {
                    return None;
                }
            }
        }
        let mut d2 = f64::INFINITY;
        for k in 0..3 {
            let a = self.p[k];
            let ab = self.ab[k];
            let (wx, wy) = (px - a.x, py - a.y);
            let t = ((wx * ab.x + wy * ab.y) * self.inv_len2[k]).clamp(0.0, 1.0);
            let (dx, dy) = (wx - t * ab.x, wy - t * ab.y);
            d2 = d2.min(dx * dx + dy * dy);
        }
        let z = d2 * inv_scale;
        if inside {
            Some(z)
        } else if z > SOFT_CUTOFF {
            None
        } else {
            Some(-z)
        }
    }

    /// Like [`Face::signed_z`], also returning the closest boundary point.
    #[inline]
    fn sample(&self, px: f64, py: f64, inv_scale: f64) -> Option<Sample> {
        let s = self.signed_z(px, py, inv_scale)?;
        let mut best = Sample {
            s,
            edge: 0,
            t: 0.0,
            diff: Vector2::zeros(),
        };
        let mut d2 = f64::INFINITY;
        for k in 0..3 {
            let a = self.p[k];
            let ab = self.ab[k];
            let (wx, wy) = (px - a.x, py - a.y);
            let t = ((wx * ab.x + wy * ab.y) * self.inv_len2[k]).clamp(0.0, 1.0);
            let (dx, dy) = (wx - t * ab.x, wy - t * ab.y);
            let dk = dx * dx + dy * dy;
            if dk < d2 {
                d2 = dk;
                best.edge = k;
                best.t = t;
                best.diff = Vector2::new(-dx, -dy);
            }
        }
        Some(best)
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug)]
struct Region {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Region {
    fn width(&self) -> usize {
        self.x1 - self.x0
    }

    fn len(&self) -> usize {
        self.width() * (self.y1 - self.y0)
    }
}

struct LinkRaster {
    vertices_cam: Vec<Vector3<f64>>,
    faces: Vec<Face>,
    region: Region,
    /// `log prod_f (1 - D_f)` over `region`.
    log_q: Vec<f64>,
}

/// Forward state of a soft render, retained for the backward pass.
pub struct SoftRaster {
    k: CameraIntrinsics,
    inv_scale: f64,
    margin: f64,
    links: Vec<LinkRaster>,
    dropped: usize,
}

impl SoftRaster {
    pub fn new(links: &[LinkGeometry<'_>], k: &CameraIntrinsics, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        let diag = k.diagonal();
        let inv_scale = 1.0 / (sigma * diag * diag);
        let margin = (SOFT_CUTOFF / inv_scale).sqrt() + 1e-9;
        let results = par::map(links, |g| rasterize_link(g, k, inv_scale, margin));
        let dropped = results.iter().map(|(_, d)| d).sum();
        if dropped > 0 {
            log::debug!("soft render: dropped {dropped} triangles crossing the near plane");
        }
        Ok(SoftRaster {
            k: *k,
            inv_scale,
            margin,
            links: results.into_iter().map(|(l, _)| l).collect(),
            dropped,
        })
    }

    /// Triangles discarded because a vertex was at or behind the near plane.
    pub fn dropped_triangles(&self) -> usize {
        self.dropped
    }

    /// Per-pixel `sum_l S_l`, before clamping.
    pub fn coverage_sum(&self) -> Vec<f64> {
        let w = self.k.width;
        let mut sum = vec![0.0; self.k.num_pixels()];
        for link in &self.links {
            let r = link.region;
            let rw = r.width();
            for y in r.y0..r.y1 {
                let src = &link.log_q[(y - r.y0) * rw..(y - r.y0 + 1) * rw];
                let dst = &mut sum[y * w + r.x0..y * w + r.x1];
                for (d, &lq) in dst.iter_mut().zip(src) {
                    if lq != 0.0 {
                        *d -= lq.exp_m1();
                    }
                }
            }
        }
        sum
    }

    pub fn mask(&self) -> Mask {
        let data = self.coverage_sum().into_iter().map(|s| s.min(1.0)).collect();
        Mask::from_raw(self.k.width, self.k.height, data)
    }

    /// Back-propagates `upstream[p] = dL / dS_l(p)` (shared by all links)
    /// to camera-frame vertex positions, one vector per link vertex.
    pub fn backward(&self, upstream: &[f64]) -> Vec<Vec<Vector3<f64>>> {
        assert_eq!(upstream.len(), self.k.num_pixels());
        par::map(&self.links, |link| self.backward_link(link, upstream))
    }

    fn backward_link(&self, link: &LinkRaster, upstream: &[f64]) -> Vec<Vector3<f64>> {
        let w = self.k.width;
        let r = link.region;
        let rw = r.width();
        // dL/dS_l * q_l per pixel; dS_l/ds_f = q_l * D_f.
        let mut gq = vec![0.0; r.len()];
        let mut any = false;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let li = (y - r.y0) * rw + (x - r.x0);
                let g = upstream[y * w + x];
                if g != 0.0 {
                    let v = g * link.log_q[li].exp();
                    gq[li] = v;
                    any |= v != 0.0;
                }
            }
        }
        let mut grad2 = vec![Vector2::<f64>::zeros(); link.vertices_cam.len()];
        if any {
            let two_scale = 2.0 * self.inv_scale;
            for face in &link.faces {
                let mut acc = [Vector2::<f64>::zeros(); 3];
                for y in face.rows.0..face.rows.1 {
                    let yc = y as f64 + 0.5;
                    let Some((xa, xb)) = face.row_span(yc, self.margin, w) else {
                        continue;
                    };
                    let row = &gq[(y - r.y0) * rw..];
                    for x in xa..xb {
                        let g = row[x - r.x0];
                        if g == 0.0 {
                            continue;
                        }
                        let Some(s) = face.sample(x as f64 + 0.5, yc, self.inv_scale) else {
                            continue;
                        };
                        let sign = if s.s >= 0.0 { 1.0 } else { -1.0 };
                        let coef = g * sigmoid(s.s) * sign * two_scale;
                        let k0 = s.edge;
                        acc[k0] += s.diff * (coef * (1.0 - s.t));
                        acc[(k0 + 1) % 3] += s.diff * (coef * s.t);
                    }
                }
                for k in 0..3 {
                    grad2[face.idx[k]] += acc[k];
                }
            }
        }
        let k = &self.k;
        link.vertices_cam
            .iter()
            .zip(&grad2)
            .map(|(v, g)| {
                if g.x == 0.0 && g.y == 0.0 {
                    return Vector3::zeros();
                }
                let iz = 1.0 / v.z;
                Vector3::new(
                    k.fx * iz * g.x,
                    k.fy * iz * g.y,
                    -(k.fx * v.x * g.x + k.fy * v.y * g.y) * iz * iz,
                )
            })
            .collect()
    }
}

fn rasterize_link(
    g: &LinkGeometry<'_>,
    k: &CameraIntrinsics,
    inv_scale: f64,
    margin: f64,
) -> (LinkRaster, usize) {
    let (w, h) = (k.width, k.height);
    let diag2 = k.diagonal().powi(2);
    let projected: Vec<Option<Vector2<f64>>> =
        g.vertices.iter().map(|v| project_point(k, v).ok()).collect();
    let mut dropped = 0;
    let mut faces = Vec::with_capacity(g.triangles.len());
    for tri in g.triangles {
        let (Some(a), Some(b), Some(c)) = (projected[tri[0]], projected[tri[1]], projected[tri[2]])
        else {
            dropped += 1;
            continue;
        };
        if !(0.5 * edge_fn(&a, &b, &c).abs() / diag2 > DEGENERATE_AREA) {
            continue;
        }
        if let Some(f) = Face::new(*tri, [a, b, c], margin, h) {
            faces.push(f);
        }
    }

    let mut region = Region {
        x0: w,
        x1: 0,
        y0: h,
        y1: 0,
    };
    for f in &faces {
        let min_x = f.p.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = f.p.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x - margin - 0.5).ceil().max(0.0);
        let x1 = ((max_x + margin - 0.5).floor() + 1.0).min(w as f64);
        if x1 <= x0 {
            continue;
        }
        region.x0 = region.x0.min(x0 as usize);
        region.x1 = region.x1.max(x1 as usize);
        region.y0 = region.y0.min(f.rows.0);
        region.y1 = region.y1.max(f.rows.1);
    }
    if region.x0 >= region.x1 || region.y0 >= region.y1 {
        region = Region {
            x0: 0,
            x1: 0,
            y0: 0,
            y1: 0,
        };
    }

    let rw = region.width();
    let mut log_q = vec![0.0; region.len()];
    for face in &faces {
        for y in face.rows.0..face.rows.1 {
            let yc = y as f64 + 0.5;
            let Some((xa, xb)) = face.row_span(yc, margin, w) else {
                continue;
            };
            let row = &mut log_q[(y - region.y0) * rw..];
            for x in xa..xb {
                if let Some(s) = face.signed_z(x as f64 + 0.5, yc, inv_scale) {
                    row[x - region.x0] -= softplus(s);
                }
            }
        }
    }
    (
        LinkRaster {
            vertices_cam: g.vertices.to_vec(),
            faces,
            region,
            log_q,
        },
        dropped,
    )
}

/// Differentiable silhouette of camera-frame link meshes.
pub fn render_soft_mask(links_cam: &[TriangleMesh], k: &CameraIntrinsics, sigma: f64) -> Result<Mask> {
    let geoms: Vec<LinkGeometry<'_>> = links_cam.iter().map(LinkGeometry::from).collect();
    Ok(SoftRaster::new(&geoms, k, sigma)?.mask())
}
