use crate::error::{Error, Result};

use super::BinaryMask;

/// Closed polygon in pixel coordinates, `(x, y)` with y pointing down.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let mut distinct: Vec<(f64, f64)> = Vec::new();
        for v in &vertices {
            if !v.0.is_finite() || !v.1.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite vertex {v:?}")));
            }
            if !distinct.contains(v) {
                distinct.push(*v);
            }
        }
        if distinct.len() < 3 {
            return Err(Error::DegeneratePolygon(distinct.len()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Copy with every vertex clamped into `[0, width] x [0, height]`.
    pub fn clipped(&self, width: usize, height: usize) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|(x, y)| (x.clamp(0.0, width as f64), y.clamp(0.0, height as f64)))
                .collect(),
        }
    }

    /// Copy with coordinates multiplied by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|(x, y)| (x * sx, y * sy)).collect(),
        }
    }

    /// Even-odd containment; points exactly on an edge count as inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let (x1, y1) = self.vertices[i];
            let (x2, y2) = self.vertices[(i + 1) % n];
            if on_segment(px, py, x1, y1, x2, y2) {
                return true;
            }
            if (y1 > py) != (y2 > py) {
                let x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1);
                if px < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), (x, y)| (x0.min(*x), y0.min(*y), x1.max(*x), y1.max(*y)),
        )
    }
}

fn on_segment(px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
    cross == 0.0 && px >= x1.min(x2) && px <= x1.max(x2) && py >= y1.min(y2) && py <= y1.max(y2)
}

/// Sets pixel `(x, y)` iff its centre `(x + 0.5, y + 0.5)` lies in the polygon.
pub fn rasterize_polygon(poly: &Polygon, width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    if width == 0 || height == 0 {
        return mask;
    }
    let (bx0, by0, bx1, by1) = poly.bounds();
    let x_lo = (bx0 - 0.5).ceil().max(0.0) as usize;
    let y_lo = (by0 - 0.5).ceil().max(0.0) as usize;
    let x_hi = ((bx1 - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
    let y_hi = ((by1 - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
    if x_hi < 0.0 || y_hi < 0.0 {
        return mask;
    }
    for y in y_lo..=y_hi as usize {
        for x in x_lo..=x_hi as usize {
            if poly.contains(x as f64 + 0.5, y as f64 + 0.5) {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
