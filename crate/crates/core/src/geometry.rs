//! Planar geometry for footprints, obstacles and occupied regions.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.x_max + dx, self.y_min + dy, self.y_max + dy)
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    pub fn half_extents(&self) -> Point {
        [0.5 * (self.x_max - self.x_min), 0.5 * (self.y_max - self.y_min)]
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point; 4] {
        [
            [self.x_min, self.y_min],
            [self.x_max, self.y_min],
            [self.x_max, self.y_max],
            [self.x_min, self.y_max],
        ]
    }

    /// Exact signed distance: Euclidean distance outside, minus the distance
    /// to the boundary inside.
    pub fn signed_distance(&self, p: Point) -> f64 {
        let c = self.center();
        let h = self.half_extents();
        let qx = (p[0] - c[0]).abs() - h[0];
        let qy = (p[1] - c[1]).abs() - h[1];
        let outside = qx.max(0.0).hypot(qy.max(0.0));
        outside + qx.max(qy).min(0.0)
    }

    /// Minimum of the signed distance over a convex polygon.
    ///
    /// Disjoint case: exact polygon–rectangle distance (vertex-to-edge
    /// pairs). Overlapping case: the signed distance is convex and piecewise
    /// linear inside the rectangle, so its minimum over the clipped polygon
    /// lies on a vertex of the clipped polygon refined by the rectangle's
    /// medial axis.
    pub fn min_signed_distance(&self, poly: &[Point]) -> f64 {
        let clipped = clip_to_rect(poly, self);
        if clipped.is_empty() {
            return convex_distance(poly, &self.corners());
        }
        let c = self.center();
        let h = self.half_extents();
        let mut best = f64::INFINITY;
        for p in &clipped {
            best = best.min(self.signed_distance(*p));
        }
        // Medial axis: ridge segment plus the four corner diagonals.
        let (r0, r1) = if h[0] >= h[1] {
            ([c[0] - (h[0] - h[1]), c[1]], [c[0] + (h[0] - h[1]), c[1]])
        } else {
            ([c[0], c[1] - (h[1] - h[0])], [c[0], c[1] + (h[1] - h[0])])
        };
        let corners = self.corners();
        let axis = [
            (r0, r1),
            (corners[0], r0),
            (corners[3], r0),
            (corners[1], r1),
            (corners[2], r1),
        ];
        for &(a, b) in &axis {
            for p in [a, b] {
                if point_in_convex(&clipped, p) {
                    best = best.min(self.signed_distance(p));
                }
            }
            let m = clipped.len();
            for i in 0..m {
                if let Some(p) = segment_intersection(clipped[i], clipped[(i + 1) % m], a, b) {
                    best = best.min(self.signed_distance(p));
                }
            }
        }
        best.min(0.0)
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Rotates `p` by `angle` and translates by `offset`.
pub fn transform(p: Point, angle: f64, offset: Point) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1] + offset[0], s * p[0] + c * p[1] + offset[1]]
}

/// Distance from point `p` to segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0] - p[0], a[1] + t * ab[1] - p[1]];
    q[0].hypot(q[1])
}

/// Distance between two disjoint convex polygons (zero if they touch).
pub fn convex_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for (p, other) in [(a, b), (b, a)] {
        let m = other.len();
        for &v in p {
            for i in 0..m {
                best = best.min(point_segment_distance(v, other[i], other[(i + 1) % m]));
            }
        }
    }
    best
}

/// Membership in a convex polygon given in counter-clockwise order
/// (boundary counts as inside).
pub fn point_in_convex(poly: &[Point], p: Point) -> bool {
    let m = poly.len();
    match m {
        0 => false,
        1 => (poly[0][0] - p[0]).abs() < 1e-12 && (poly[0][1] - p[1]).abs() < 1e-12,
        2 => point_segment_distance(p, poly[0], poly[1]) < 1e-12,
        _ => (0..m).all(|i| cross(poly[i], poly[(i + 1) % m], p) >= -1e-12),
    }
}

/// Intersection point of two closed segments, if they cross at a single point.
pub fn segment_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Option<Point> {
    let r = [p2[0] - p1[0], p2[1] - p1[1]];
    let s = [q2[0] - q1[0], q2[1] - q1[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = [q1[0] - p1[0], q1[1] - p1[1]];
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some([p1[0] + t * r[0], p1[1] + t * r[1]])
    } else {
        None
    }
}

/// Sutherland–Hodgman clip of a convex polygon against a rectangle.
pub fn clip_to_rect(poly: &[Point], rect: &Rect) -> Vec<Point> {
    // Each half-plane is (axis, bound, keep_greater).
    let planes = [
        (0, rect.x_min, true),
        (0, rect.x_max, false),
        (1, rect.y_min, true),
        (1, rect.y_max, false),
    ];
    let mut out: Vec<Point> = poly.to_vec();
    for &(axis, bound, keep_greater) in &planes {
        if out.is_empty() {
            break;
        }
        let inside = |p: &Point| {
            if keep_greater {
                p[axis] >= bound
            } else {
                p[axis] <= bound
            }
        };
        let input = std::mem::take(&mut out);
        let m = input.len();
        for i in 0..m {
            let cur = input[i];
            let prev = input[(i + m - 1) % m];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut p = [
                    prev[0] + t * (cur[0] - prev[0]),
                    prev[1] + t * (cur[1] - prev[1]),
                ];
                p[axis] = bound;
                out.push(p);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, no repeated
/// closing vertex.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Whether a convex polygon intersects a rectangle (closed sets), by
/// separating-axis test.
pub fn convex_intersects_rect(poly: &[Point], rect: &Rect) -> bool {
    !clip_to_rect(poly, rect).is_empty()
}

/// Axis-aligned bounding box of a point set.
pub fn bounding_rect(points: &[Point]) -> Rect {
    let mut r = Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        r.x_min = r.x_min.min(p[0]);
        r.x_max = r.x_max.max(p[0]);
        r.y_min = r.y_min.min(p[1]);
        r.y_max = r.y_max.max(p[1]);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_distance_inside_and_outside() {
        let r = Rect::new(0.0, 2.0, 0.0, 1.0);
        assert!((r.signed_distance([3.0, 0.5]) - 1.0).abs() < 1e-12);
        assert!((r.signed_distance([3.0, 2.0]) - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.signed_distance([1.0, 0.5]) + 0.5).abs() < 1e-12);
        assert!((r.signed_distance([0.2, 0.5]) + 0.2).abs() < 1e-12);
        assert_eq!(r.signed_distance([0.0, 0.5]), 0.0);
    }

    #[test]
    fn polygon_min_signed_distance_matches_dense_sampling() {
        let rect = Rect::new(0.0, 0.5, -0.1, 0.1);
        let cases: [(f64, Point); 4] = [
            (0.3, [0.1, -0.05]),
            (1.0, [0.2, 0.0]),
            (-0.7, [0.6, 0.05]),
            (0.0, [0.9, 0.3]),
        ];
        for (angle, offset) in cases {
            let body = Rect::new(0.0, 0.5, -0.1, 0.1).corners();
            let poly: Vec<Point> = body.iter().map(|&c| transform(c, angle, offset)).collect();
            let exact = rect.min_signed_distance(&poly);
            // Sample the polygon densely through bilinear body coordinates.
            let mut sampled = f64::INFINITY;
            let n = 400;
            for i in 0..=n {
                for j in 0..=n {
                    let bx = 0.5 * i as f64 / n as f64;
                    let by = -0.1 + 0.2 * j as f64 / n as f64;
                    sampled = sampled.min(rect.signed_distance(transform([bx, by], angle, offset)));
                }
            }
            assert!(exact <= sampled + 1e-12, "exact {exact} above sampled {sampled}");
            assert!(sampled - exact < 2e-3, "exact {exact} far below sampled {sampled}");
        }
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(point_in_convex(&hull, [0.5, 0.5]));
        assert!(!point_in_convex(&hull, [1.5, 0.5]));
    }

    #[test]
    fn clipping_disjoint_is_empty() {
        let rect = Rect::new(0.0, 1.0, 0.0, 1.0);
        let poly = [[2.0, 2.0], [3.0, 2.0], [3.0, 3.0]];
        assert!(clip_to_rect(&poly, &rect).is_empty());
        assert!((convex_distance(&poly, &rect.corners()) - 2f64.sqrt()).abs() < 1e-12);
    }
}
