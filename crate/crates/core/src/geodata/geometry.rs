use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Polygon with an outer ring followed by optional holes. Rings are closed:
/// the first vertex is repeated at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    rings: Vec<Vec<Point>>,
}

impl Polygon {
    /// Validates ring closure, vertex count and a simple outer ring.
    pub fn new(rings: Vec<Vec<Point>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::InvalidGeometry("polygon without rings".into()));
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::InvalidGeometry(format!(
                    "ring {i} has {} vertices, need at least 4",
                    ring.len()
                )));
            }
            if ring.first() != ring.last() {
                return Err(Error::InvalidGeometry(format!("ring {i} is not closed")));
            }
            if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::InvalidGeometry(format!("ring {i} has non-finite coordinates")));
            }
        }
        let poly = Self { rings };
        if poly.exterior_area() == 0.0 {
            return Err(Error::InvalidGeometry("outer ring has zero area".into()));
        }
        if ring_self_intersects(&poly.rings[0]) {
            return Err(Error::InvalidGeometry("outer ring self-intersects".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle, convenient for fixtures.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
            Point::new(x0, y0),
        ]])
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    pub fn exterior(&self) -> &[Point] {
        &self.rings[0]
    }

    fn exterior_area(&self) -> f64 {
        signed_area(&self.rings[0]).abs()
    }

    /// Area of the outer ring minus the holes.
    pub fn area(&self) -> f64 {
        let holes: f64 = self.rings[1..].iter().map(|r| signed_area(r).abs()).sum();
        self.exterior_area() - holes
    }

    /// Area-weighted centroid (holes subtracted).
    pub fn centroid(&self) -> Point {
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for (i, ring) in self.rings.iter().enumerate() {
            let a = signed_area(ring);
            let (mx, my) = ring_moments(ring);
            // Normalise orientation: outer ring counts positive, holes negative.
            let sign = if (i == 0) == (a >= 0.0) { 1.0 } else { -1.0 };
            area += sign * a;
            cx += sign * mx;
            cy += sign * my;
        }
        Point::new(cx / (6.0 * area), cy / (6.0 * area))
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.rings[0] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Even-odd containment over all rings. Points exactly on an edge may
    /// fall either way.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if (a.y > p.y) != (b.y > p.y) {
                    let t = (p.y - a.y) / (b.y - a.y);
                    if p.x < a.x + t * (b.x - a.x) {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.rings
            .iter()
            .flat_map(|r| r.windows(2))
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance to the polygon area; zero inside.
    pub fn distance(&self, p: Point) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            self.boundary_distance(p)
        }
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Polygon {
        Polygon {
            rings: self.rings.iter().map(|r| r.iter().map(|&p| f(p)).collect()).collect(),
        }
    }
}

fn signed_area(ring: &[Point]) -> f64 {
    ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum::<f64>() / 2.0
}

fn ring_moments(ring: &[Point]) -> (f64, f64) {
    ring.windows(2).fold((0.0, 0.0), |(mx, my), w| {
        let (a, b) = (w[0], w[1]);
        let cross = a.x * b.y - b.x * a.y;
        (mx + (a.x + b.x) * cross, my + (a.y + b.y) * cross)
    })
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            // Adjacent edges share a vertex by construction.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}
