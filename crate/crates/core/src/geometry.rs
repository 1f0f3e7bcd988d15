//! Planar primitives shared by the world model, perception and metrics.
//!
//! Everything here is a pure function over `f64` coordinates in meters and
//! angles in radians. Ties are always broken toward the lowest index so the
//! results are reproducible bit-for-bit.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate reference path")]
    DegeneratePath,
    #[error("trajectory penetrates obstacle")]
    PointInsideObstacle,
    #[error("empty polygon")]
    EmptyPolygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Point at `range` meters from `self` along the absolute direction `angle`.
    pub fn offset(self, angle: f64, range: f64) -> Self {
        Self::new(self.x + range * angle.cos(), self.y + range * angle.sin())
    }

    pub fn lerp(self, other: Self, t: f64) -> Self {
        self + (other - self) * t
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Self) -> Self {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Self) -> Self {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Self {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    if a < -PI {
        a = -PI;
    }
    a
}

/// Agent position plus heading; the heading is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(flatten)]
    pub position: Point2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Point2, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_angle(heading),
        }
    }

    /// Bearing of `p` relative to the heading, in `[-π, π)`.
    pub fn bearing_to(&self, p: Point2) -> f64 {
        if p == self.position {
            return 0.0;
        }
        normalize_angle((p - self.position).angle() - self.heading)
    }

    pub fn rotated(&self, delta: f64) -> Self {
        Self::new(self.position, self.heading + delta)
    }

    /// World-frame location of a point seen at `bearing`, `distance` from this pose.
    pub fn locate(&self, bearing: f64, distance: f64) -> Point2 {
        self.position.offset(self.heading + bearing, distance)
    }
}

/// Clamped orthogonal projection of `p` onto segment `[a, b]`.
/// Returns the foot and its parameter in `[0, 1]`.
pub fn project_to_segment(p: Point2, a: Point2, b: Point2) -> (Point2, f64) {
    let d = b - a;
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    (a + d * t, t)
}

/// Closest point on a polyline; ties go to the earliest segment.
pub fn project_to_polyline(p: Point2, path: &[Point2]) -> Result<(Point2, f64), GeometryError> {
    if path.len() < 2 {
        return Err(GeometryError::DegeneratePath);
    }
    let mut best = (path[0], f64::INFINITY);
    for w in path.windows(2) {
        let (foot, _) = project_to_segment(p, w[0], w[1]);
        let d = p.distance(foot);
        if d < best.1 {
            best = (foot, d);
        }
    }
    Ok(best)
}

pub fn arc_length(points: &[Point2]) -> f64 {
    points.windows(2).fold(0.0, |acc, w| acc + w[0].distance(w[1]))
}

/// Re-samples a polyline at (at most) `spacing` meters along its arc length.
/// Both endpoints are always kept.
pub fn resample(points: &[Point2], spacing: f64) -> Vec<Point2> {
    assert!(spacing > 0.0, "resampling spacing must be positive");
    let Some(&first) = points.first() else {
        return Vec::new();
    };
    let mut out = vec![first];
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        if len == 0.0 {
            continue;
        }
        let n = (len / spacing).ceil() as usize;
        for i in 1..=n {
            out.push(w[0].lerp(w[1], i as f64 / n as f64));
        }
    }
    out
}

pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

/// Even-odd crossing test. Boundary points may land on either side.
pub fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn polygon_edges(poly: &[Point2]) -> impl Iterator<Item = (Point2, Point2)> + '_ {
    let n = poly.len();
    (0..n).map(move |i| (poly[i], poly[(i + 1) % n]))
}

/// Closest boundary point of `poly` to `p` as `(point, edge index, parameter)`.
/// Ties go to the lowest edge index, then the lowest parameter.
pub fn nearest_boundary_point(p: Point2, poly: &[Point2]) -> Option<(Point2, usize, f64)> {
    let mut best: Option<(Point2, usize, f64, f64)> = None;
    for (i, (a, b)) in polygon_edges(poly).enumerate() {
        let (foot, t) = project_to_segment(p, a, b);
        let d = p.distance(foot);
        match best {
            Some((_, _, _, bd)) if d >= bd => {}
            _ => best = Some((foot, i, t, d)),
        }
    }
    best.map(|(q, i, t, _)| (q, i, t))
}

pub fn distance_to_boundary(p: Point2, poly: &[Point2]) -> f64 {
    nearest_boundary_point(p, poly)
        .map(|(q, _, _)| p.distance(q))
        .unwrap_or(f64::INFINITY)
}

/// Closed-segment intersection including touching and collinear overlap.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
        (b - a).cross(c - a)
    }
    fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
        p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Smallest parameter `t ∈ [0, 1]` along `a → b` at which the closed segment
/// touches the boundary of `poly`.
pub fn first_boundary_contact(a: Point2, b: Point2, poly: &[Point2]) -> Option<f64> {
    let d = b - a;
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if best.is_none_or(|bt| t < bt) {
            best = Some(t);
        }
    };
    for (q1, q2) in polygon_edges(poly) {
        let e = q2 - q1;
        let w = q1 - a;
        let denom = d.cross(e);
        if denom != 0.0 {
            let t = w.cross(e) / denom;
            let u = w.cross(d) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                keep(t);
            }
        } else if w.cross(d) == 0.0 {
            let dd = d.dot(d);
            if dd == 0.0 {
                continue;
            }
            let t0 = w.dot(d) / dd;
            let t1 = (q2 - a).dot(d) / dd;
            let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            if hi >= 0.0 && lo <= 1.0 {
                keep(lo.max(0.0));
            }
        }
    }
    best
}

/// Whether the open segment `(a, b)` meets the closed polygon region.
/// Touching a vertex or an edge counts as meeting it.
pub fn open_segment_meets_polygon(a: Point2, b: Point2, poly: &[Point2]) -> bool {
    let d = b - a;
    if d.dot(d) == 0.0 {
        return false;
    }
    for (q1, q2) in polygon_edges(poly) {
        let e = q2 - q1;
        let w = q1 - a;
        let denom = d.cross(e);
        if denom != 0.0 {
            let t = w.cross(e) / denom;
            let u = w.cross(d) / denom;
            if t > 0.0 && t < 1.0 && (0.0..=1.0).contains(&u) {
                return true;
            }
        } else if w.cross(d) == 0.0 {
            let dd = d.dot(d);
            let t0 = w.dot(d) / dd;
            let t1 = (q2 - a).dot(d) / dd;
            let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            if hi > 0.0 && lo < 1.0 {
                return true;
            }
        }
    }
    // No boundary contact in the interior: the open segment is wholly inside or outside.
    point_in_polygon(a.lerp(b, 0.5), poly)
}

/// Distance along a ray from `origin` in direction `angle` to the polygon boundary.
pub fn ray_polygon_distance(origin: Point2, angle: f64, poly: &[Point2]) -> Option<f64> {
    let d = Point2::new(angle.cos(), angle.sin());
    let mut best: Option<f64> = None;
    for (q1, q2) in polygon_edges(poly) {
        let e = q2 - q1;
        let w = q1 - origin;
        let denom = d.cross(e);
        let s = if denom != 0.0 {
            let s = w.cross(e) / denom;
            let u = w.cross(d) / denom;
            if s >= 0.0 && (0.0..=1.0).contains(&u) {
                s
            } else {
                continue;
            }
        } else if w.cross(d) == 0.0 {
            let s0 = w.dot(d);
            let s1 = (q2 - origin).dot(d);
            if s0.max(s1) < 0.0 {
                continue;
            }
            s0.min(s1).max(0.0)
        } else {
            continue;
        };
        if best.is_none_or(|b| s < b) {
            best = Some(s);
        }
    }
    best
}

/// Simple polygon: at least three vertices, non-zero area, no two
/// non-adjacent edges touching and no adjacent edges folding back.
pub fn polygon_is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 || poly.iter().any(|p| !p.is_finite()) {
        return false;
    }
    if signed_area(poly).abs() <= 1e-12 {
        return false;
    }
    let edges: Vec<_> = polygon_edges(poly).collect();
    for i in 0..n {
        let (a, b) = edges[i];
        if a == b {
            return false;
        }
        for (j, &(c, d)) in edges.iter().enumerate().skip(i + 1) {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges share a vertex; overlapping beyond it is a fold.
                let shared = if j == i + 1 { b } else { a };
                let (u, v) = if j == i + 1 { (a - shared, d - shared) } else { (b - shared, c - shared) };
                if u.cross(v) == 0.0 && u.dot(v) > 0.0 {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Regular `n`-gon inscribed in a circle; used for curved obstacles.
pub fn regular_polygon(center: Point2, radius: f64, n: usize) -> Vec<Point2> {
    (0..n)
        .map(|i| center.offset(2.0 * PI * i as f64 / n as f64, radius))
        .collect()
}

pub fn rectangle(min: Point2, max: Point2) -> Vec<Point2> {
    vec![
        min,
        Point2::new(max.x, min.y),
        max,
        Point2::new(min.x, max.y),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn angles_wrap_into_half_open_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < EPS);
        assert!((normalize_angle(-3.0 * PI / 2.0) - PI / 2.0).abs() < EPS);
        for k in -20..20 {
            let a = normalize_angle(k as f64 * 0.77);
            assert!((-PI..PI).contains(&a));
        }
    }

    #[test]
    fn perpendicular_drop_onto_polyline() {
        let path = [Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)];
        let (foot, d) = project_to_polyline(Point2::new(0.0, 1.0), &path).unwrap();
        assert_eq!(foot, Point2::new(0.0, 0.0));
        assert_eq!(d, 1.0);
        let (_, d) = project_to_polyline(Point2::new(0.3, 0.0), &path).unwrap();
        assert!(d < 1e-15);
    }

    #[test]
    fn projection_clamps_to_endpoint() {
        let path = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0)];
        let p = Point2::new(3.0, 1.0);
        let (foot, d) = project_to_polyline(p, &path).unwrap();
        assert_eq!(foot, Point2::new(2.0, 0.0));
        assert!((d - 2f64.sqrt()).abs() < EPS);
        // Dense sampling of the path at 1e-4 m agrees.
        let sampled = (0..=20_000)
            .map(|i| p.distance(Point2::new(i as f64 * 1e-4, 0.0)))
            .fold(f64::INFINITY, f64::min);
        assert!((sampled - d).abs() < 1e-9);
    }

    #[test]
    fn projection_rejects_degenerate_path() {
        assert_eq!(
            project_to_polyline(Point2::new(0.0, 0.0), &[Point2::new(1.0, 1.0)]),
            Err(GeometryError::DegeneratePath)
        );
        assert_eq!(project_to_polyline(Point2::new(0.0, 0.0), &[]), Err(GeometryError::DegeneratePath));
    }

    #[test]
    fn projection_tie_prefers_earliest_segment() {
        // p equidistant from both segments of a V.
        let path = [Point2::new(-1.0, 1.0), Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)];
        let (foot, _) = project_to_polyline(Point2::new(0.0, 2.0), &path).unwrap();
        assert!(foot.x < 0.0);
    }

    #[test]
    fn arc_length_cases() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0)];
        assert_eq!(arc_length(&pts), 2.0);
        assert_eq!(arc_length(&[Point2::new(4.0, 2.0)]), 0.0);
        let semi: Vec<_> = (0..=180)
            .map(|d| Point2::new(0.0, 0.0).offset((d as f64).to_radians(), 1.0))
            .collect();
        assert!((arc_length(&semi) - PI).abs() < 1e-3);
    }

    #[test]
    fn nearest_point_on_disk_approximation() {
        let disk = regular_polygon(Point2::new(0.0, 0.0), 1.0, 64);
        let (q, _, _) = nearest_boundary_point(Point2::new(2.0, 0.0), &disk).unwrap();
        assert!(q.distance(Point2::new(1.0, 0.0)) < 0.01);
        let on = disk[5].lerp(disk[6], 0.3);
        let (q, _, _) = nearest_boundary_point(on, &disk).unwrap();
        assert!(q.distance(on) < 1e-12);
    }

    #[test]
    fn simple_polygon_checks() {
        let sq = rectangle(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0));
        assert!(polygon_is_simple(&sq));
        let bowtie = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        assert!(!polygon_is_simple(&bowtie));
        let flat = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        assert!(!polygon_is_simple(&flat));
        assert!(!polygon_is_simple(&sq[..2]));
    }

    #[test]
    fn open_segment_touching_vertex_counts() {
        let sq = rectangle(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0));
        // Passes exactly through the corner (1, 1).
        assert!(open_segment_meets_polygon(Point2::new(0.0, 2.0), Point2::new(2.0, 0.0), &sq));
        // Runs along the top edge.
        assert!(open_segment_meets_polygon(Point2::new(-1.0, 1.0), Point2::new(2.0, 1.0), &sq));
        // Ends exactly on the boundary: the open segment stops short of it.
        assert!(!open_segment_meets_polygon(Point2::new(-1.0, 0.5), Point2::new(0.0, 0.5), &sq));
        // Entirely inside.
        assert!(open_segment_meets_polygon(Point2::new(0.2, 0.2), Point2::new(0.8, 0.8), &sq));
    }

    #[test]
    fn ray_hits_nearest_edge() {
        let sq = rectangle(Point2::new(2.0, -1.0), Point2::new(3.0, 1.0));
        let d = ray_polygon_distance(Point2::new(0.0, 0.0), 0.0, &sq).unwrap();
        assert!((d - 2.0).abs() < EPS);
        assert!(ray_polygon_distance(Point2::new(0.0, 0.0), PI, &sq).is_none());
    }

    #[test]
    fn resample_keeps_endpoints_and_spacing() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let r = resample(&pts, 0.3);
        assert_eq!(r.first(), Some(&pts[0]));
        assert_eq!(r.last(), Some(&pts[1]));
        assert!(r.windows(2).all(|w| w[0].distance(w[1]) <= 0.3 + 1e-12));
    }
}
