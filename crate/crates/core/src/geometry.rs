//! Planar primitives shared by morphometry and tiling: shoelace area, convex
//! hull, minimum-area enclosing rectangle (rotating calipers) and
//! Sutherland–Hodgman clipping against an axis-aligned window.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2-D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotate counter-clockwise by `angle` radians about `pivot`.
    pub fn rotate_about(self, pivot: Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let d = self - pivot;
        Point::new(pivot.x + d.x * c - d.y * s, pivot.y + d.x * s + d.y * c)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, p) in poly.iter().enumerate() {
        let q = poly[(i + 1) % poly.len()];
        twice += p.cross(q);
    }
    twice * 0.5
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let sum = points.iter().fold(Point::default(), |acc, &p| acc + p);
    sum * (1.0 / n)
}

/// Convex hull by Andrew's monotone chain. Returns vertices in
/// counter-clockwise order without collinear points; fewer than three points
/// means the input collapsed to a segment or a point.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }

    let turn = |o: Point, a: Point, b: Point| (a - o).cross(b - o);
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// A rectangle with arbitrary orientation. `length >= width` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedRect {
    pub center: Point,
    /// Unit vector along the long side.
    pub axis: Point,
    pub length: f64,
    pub width: f64,
}

impl RotatedRect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Point; 4] {
        let u = self.axis * (self.length * 0.5);
        let v = Point::new(-self.axis.y, self.axis.x) * (self.width * 0.5);
        let c = self.center;
        [c - u - v, c + u - v, c + u + v, c - u + v]
    }

    fn from_frame(origin: Point, u: Point, along: (f64, f64), across: (f64, f64)) -> Self {
        let v = Point::new(-u.y, u.x);
        let du = along.1 - along.0;
        let dv = across.1 - across.0;
        let center = origin + u * ((along.0 + along.1) * 0.5) + v * ((across.0 + across.1) * 0.5);
        if du >= dv {
            RotatedRect { center, axis: u, length: du, width: dv }
        } else {
            RotatedRect { center, axis: v, length: dv, width: du }
        }
    }
}

/// Relative area difference below which two enclosing rectangles tie.
pub const AREA_TIE_TOLERANCE: f64 = 1e-9;

/// Whether a candidate rectangle `(area, perimeter)` beats the incumbent
/// under the minimum-area rule with perimeter tie-break.
pub fn rect_candidate_better(candidate: (f64, f64), incumbent: (f64, f64)) -> bool {
    let tol = AREA_TIE_TOLERANCE * incumbent.0.abs().max(candidate.0.abs());
    if candidate.0 < incumbent.0 - tol {
        return true;
    }
    candidate.0 <= incumbent.0 + tol && candidate.1 < incumbent.1
}

/// Minimum-area enclosing rectangle of a point set.
///
/// Runs rotating calipers over the convex hull: one side of the optimal
/// rectangle is collinear with a hull edge, and the three supporting vertices
/// (farthest forward, farthest backward, farthest from the edge) advance
/// monotonically as the edge rotates. Returns `None` for an empty input; a
/// hull that collapses to a segment yields a rectangle of zero width.
///
/// Several rectangles can share the minimum area (every edge-flush rectangle
/// of an acute triangle has twice its area). Candidates within a relative
/// [`AREA_TIE_TOLERANCE`] are ranked by perimeter, which makes the pair of
/// side lengths unique.
pub fn min_area_rect(points: &[Point]) -> Option<RotatedRect> {
    let hull = convex_hull(points);
    match hull.len() {
        0 => None,
        1 => Some(RotatedRect { center: hull[0], axis: Point::new(1.0, 0.0), length: 0.0, width: 0.0 }),
        2 => {
            let d = hull[1] - hull[0];
            let len = d.norm();
            Some(RotatedRect { center: (hull[0] + hull[1]) * 0.5, axis: d * (1.0 / len), length: len, width: 0.0 })
        }
        _ => Some(rotating_calipers(&hull)),
    }
}

fn rotating_calipers(hull: &[Point]) -> RotatedRect {
    let n = hull.len();
    let edge_dir = |i: usize| {
        let d = hull[(i + 1) % n] - hull[i];
        d * (1.0 / d.norm())
    };

    // Supporting vertices for edge 0, found by a single scan.
    let u0 = edge_dir(0);
    let v0 = Point::new(-u0.y, u0.x);
    let argmax = |f: &dyn Fn(Point) -> f64| (0..n).fold(0, |best, k| if f(hull[k]) > f(hull[best]) { k } else { best });
    let mut fwd = argmax(&|p| p.dot(u0));
    let mut back = argmax(&|p| -p.dot(u0));
    let mut far = argmax(&|p| p.dot(v0));

    let mut best: Option<((f64, f64), RotatedRect)> = None;
    for i in 0..n {
        let u = edge_dir(i);
        let v = Point::new(-u.y, u.x);
        let origin = hull[i];
        let proj = |p: Point| ((p - origin).dot(u), (p - origin).dot(v));

        // Each caliper only moves forward; n steps bound the walk.
        for _ in 0..n {
            let next = (fwd + 1) % n;
            if proj(hull[next]).0 >= proj(hull[fwd]).0 {
                fwd = next;
            } else {
                break;
            }
        }
        for _ in 0..n {
            let next = (far + 1) % n;
            if proj(hull[next]).1 >= proj(hull[far]).1 {
                far = next;
            } else {
                break;
            }
        }
        for _ in 0..n {
            let next = (back + 1) % n;
            if proj(hull[next]).0 <= proj(hull[back]).0 {
                back = next;
            } else {
                break;
            }
        }

        let along = (proj(hull[back]).0, proj(hull[fwd]).0);
        let across = (0.0, proj(hull[far]).1);
        let (a, b) = (along.1 - along.0, across.1 - across.0);
        let key = (a * b, a + b);
        if best.as_ref().is_none_or(|(k, _)| rect_candidate_better(key, *k)) {
            best = Some((key, RotatedRect::from_frame(origin, u, along, across)));
        }
    }
    best.expect("hull has at least three vertices").1
}

/// Axis-aligned clip window `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ClipRect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Sutherland–Hodgman clipping of `poly` against `window`. The subject may be
/// non-convex; the result is empty when nothing of the polygon lies inside.
pub fn clip_to_rect(poly: &[Point], window: ClipRect) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }

    impl Edge {
        fn inside(self, p: Point) -> bool {
            match self {
                Edge::Left(x) => p.x >= x,
                Edge::Right(x) => p.x <= x,
                Edge::Bottom(y) => p.y >= y,
                Edge::Top(y) => p.y <= y,
            }
        }

        fn intersect(self, a: Point, b: Point) -> Point {
            match self {
                Edge::Left(x) | Edge::Right(x) => {
                    let t = (x - a.x) / (b.x - a.x);
                    Point::new(x, a.y + t * (b.y - a.y))
                }
                Edge::Bottom(y) | Edge::Top(y) => {
                    let t = (y - a.y) / (b.y - a.y);
                    Point::new(a.x + t * (b.x - a.x), y)
                }
            }
        }
    }

    let edges = [Edge::Left(window.x0), Edge::Right(window.x1), Edge::Bottom(window.y0), Edge::Top(window.y1)];
    let mut output = poly.to_vec();
    for edge in edges {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (edge.inside(prev), edge.inside(cur)) {
                (true, true) => output.push(cur),
                (true, false) => output.push(edge.intersect(prev, cur)),
                (false, true) => {
                    output.push(edge.intersect(prev, cur));
                    output.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    output
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: f64, h: f64) -> Vec<Point> {
        vec![Point::new(0.0, 0.0), Point::new(w, 0.0), Point::new(w, h), Point::new(0.0, h)]
    }

    #[test]
    fn shoelace_orientation() {
        let r = rect(10.0, 4.0);
        assert_eq!(signed_area(&r), 40.0);
        let rev: Vec<_> = r.iter().rev().copied().collect();
        assert_eq!(signed_area(&rev), -40.0);
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let mut pts = rect(4.0, 4.0);
        pts.push(Point::new(2.0, 2.0));
        pts.push(Point::new(2.0, 0.0));
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(signed_area(&hull) > 0.0);
    }

    #[test]
    fn segment_hull_gives_zero_width() {
        let pts = [Point::new(0.0, 0.0), Point::new(3.0, 4.0), Point::new(1.5, 2.0)];
        let r = min_area_rect(&pts).unwrap();
        assert!((r.length - 5.0).abs() < 1e-12);
        assert_eq!(r.width, 0.0);
    }

    #[test]
    fn min_rect_of_triangle() {
        // Right triangle: best rectangle sits on the hypotenuse or a leg, area 12.
        let pts = [Point::new(0.0, 0.0), Point::new(4.0, 0.0), Point::new(0.0, 3.0)];
        let r = min_area_rect(&pts).unwrap();
        assert!((r.area() - 12.0).abs() < 1e-9);
    }

    #[test]
    fn corners_reproduce_rect() {
        let r = min_area_rect(&rect(10.0, 4.0)).unwrap();
        assert!((r.length - 10.0).abs() < 1e-12 && (r.width - 4.0).abs() < 1e-12);
        assert!((signed_area(&r.corners()) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn clip_half_overlap() {
        let square = rect(4.0, 4.0);
        let out = clip_to_rect(&square, ClipRect { x0: 2.0, y0: -1.0, x1: 10.0, y1: 10.0 });
        assert!((signed_area(&out) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn clip_disjoint_is_empty() {
        let out = clip_to_rect(&rect(1.0, 1.0), ClipRect { x0: 5.0, y0: 5.0, x1: 6.0, y1: 6.0 });
        assert!(signed_area(&out).abs() < 1e-12);
    }

    #[test]
    fn clip_clockwise_subject() {
        let cw: Vec<_> = rect(4.0, 4.0).into_iter().rev().collect();
        let out = clip_to_rect(&cw, ClipRect { x0: 1.0, y0: 1.0, x1: 3.0, y1: 3.0 });
        assert!((signed_area(&out).abs() - 4.0).abs() < 1e-12);
    }
}
