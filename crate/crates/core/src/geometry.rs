//! Axis-aligned boxes, intersection-over-union and station ROI polygons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box: width {w} and height {h} must both be positive")]
    DegenerateBox { w: f64, h: f64 },
    #[error("roi polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("roi polygon has zero area")]
    ZeroArea,
}

/// Pixel box stored as top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()
    }

    /// Measurement vector `(cx, cy, aspect, height)` used by the Kalman filter.
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w / self.h, self.h]
    }

    pub fn from_xyah(m: [f64; 4]) -> Self {
        let w = m[2] * m[3];
        BBox::from_center(m[0], m[1], w, m[3])
    }

    /// Clips the box to `[0, width] x [0, height]`. Returns `None` when nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        if x1 > x0 && y1 > y0 {
            Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
        } else {
            None
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    for bx in [a, b] {
        if !(bx.w > 0.0 && bx.h > 0.0) {
            return Err(GeometryError::DegenerateBox { w: bx.w, h: bx.h });
        }
    }
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Simple polygon in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        let poly = Polygon { vertices };
        if poly.signed_area().abs() <= f64::EPSILON {
            return Err(GeometryError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum::<f64>()
            / 2.0
    }

    /// Strict containment: points on an edge are outside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[(i + n - 1) % n];
            if on_segment(px, py, xi, yi, xj, yj) {
                return false;
            }
            if (yi > py) != (yj > py) {
                let x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
                if px < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(px: f64, py: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    let cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    if cross.abs() > 1e-9 * len.max(1.0) {
        return false;
    }
    px >= x0.min(x1) - 1e-9
        && px <= x0.max(x1) + 1e-9
        && py >= y0.min(y1) - 1e-9
        && py <= y0.max(y1) + 1e-9
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = GeometryError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rasterizes both boxes on a unit grid; only exact for integer-aligned boxes.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let cells = |bx: &BBox| {
            let mut s = std::collections::HashSet::new();
            for x in bx.x as i64..(bx.x + bx.w) as i64 {
                for y in bx.y as i64..(bx.y + bx.h) as i64 {
                    s.insert((x, y));
                }
            }
            s
        };
        let (ca, cb) = (cells(a), cells(b));
        ca.intersection(&cb).count() as f64 / ca.union(&cb).count() as f64
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 5.0, 5.0)).unwrap(), 0.0);
        let shifted = BBox::new(5.0, 0.0, 10.0, 10.0);
        let expected = raster_iou(&a, &shifted);
        assert!((expected - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &shifted).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_raster_on_integer_boxes() {
        let boxes = [
            BBox::new(0.0, 0.0, 4.0, 7.0),
            BBox::new(2.0, 3.0, 6.0, 2.0),
            BBox::new(1.0, 1.0, 1.0, 1.0),
            BBox::new(3.0, 0.0, 9.0, 9.0),
        ];
        for a in &boxes {
            for b in &boxes {
                assert!((iou(a, b).unwrap() - raster_iou(a, b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn touching_edges_have_zero_iou() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        let a = BBox::new(0.0, 0.0, 0.0, 10.0);
        assert!(matches!(
            iou(&a, &BBox::new(0.0, 0.0, 1.0, 1.0)),
            Err(GeometryError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn clamp_cuts_right_edge() {
        let b = BBox::new(1200.0, 100.0, 150.0, 50.0);
        let c = b.clamp_to(1280.0, 720.0).unwrap();
        assert_eq!(c.x + c.w, 1280.0);
        assert_eq!(c.w, 80.0);
        assert!(BBox::new(1300.0, 0.0, 10.0, 10.0).clamp_to(1280.0, 720.0).is_none());
    }

    #[test]
    fn polygon_containment_is_strict() {
        let sq = Polygon::new(vec![[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0]]).unwrap();
        assert!(sq.contains(50.0, 50.0));
        assert!(!sq.contains(100.0, 50.0));
        assert!(!sq.contains(101.0, 50.0));
        assert!(!sq.contains(0.0, 0.0));
        assert!(sq.contains(99.0, 1.0));
    }

    #[test]
    fn polygon_validation() {
        assert_eq!(
            Polygon::new(vec![[0.0, 0.0], [1.0, 1.0]]),
            Err(GeometryError::TooFewVertices(2))
        );
        assert_eq!(
            Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]),
            Err(GeometryError::ZeroArea)
        );
    }

    #[test]
    fn xyah_round_trip() {
        let b = BBox::new(10.0, 20.0, 80.0, 200.0);
        let back = BBox::from_xyah(b.to_xyah());
        assert!((back.x - b.x).abs() < 1e-12 && (back.w - b.w).abs() < 1e-12);
    }
}
