//! Exact 2D primitives shared by every other module.
//!
//! Coordinates are continuous pixels in the image frame: origin at the
//! top-left corner, `y` growing downward. Pixel `(i, j)` (row, column) has its
//! center at `(j + 0.5, i + 0.5)`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two endpoints closer than this are treated as the same point.
pub const DEGENERATE_EPS: f64 = 1e-9;

/// Cross products below this magnitude mean parallel supporting lines.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    #[error("segment is degenerate (endpoints coincide)")]
    DegenerateSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, rhs: Self) -> f64 {
        self.x * rhs.y - self.y * rhs.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, rhs: Self) -> f64 {
        (rhs - self).norm()
    }

    pub fn midpoint(self, rhs: Self) -> Self {
        Self::new(0.5 * (self.x + rhs.x), 0.5 * (self.y + rhs.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Self) -> Self::Output {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Self) -> Self::Output {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Self::Output {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Ordered endpoint pair. The order carries no geometric meaning except
/// where a caller (e.g. vector-label supervision) decides it does.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LineSegment {
    pub a: Point,
    pub b: Point,
}

impl LineSegment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn from_coords(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self::new(Point::new(ax, ay), Point::new(bx, by))
    }

    pub fn direction(&self) -> Point {
        self.b - self.a
    }

    pub fn length(&self) -> f64 {
        self.direction().norm()
    }

    pub fn is_degenerate(&self) -> bool {
        self.length() < DEGENERATE_EPS
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.b, self.a)
    }

    pub fn point_at(&self, s: f64) -> Point {
        self.a + self.direction() * s
    }

    pub fn endpoints(&self) -> [Point; 2] {
        [self.a, self.b]
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.a.x, self.a.y, self.b.x, self.b.y]
    }
}

/// One `size × size` patch of the image lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
    pub size: u32,
}

impl PatchRect {
    pub fn new(row: usize, col: usize, size: u32) -> Self {
        assert!(size > 0, "patch size must be positive");
        Self { row, col, size }
    }

    pub fn origin(&self) -> Point {
        Point::new(
            (self.col as u64 * self.size as u64) as f64,
            (self.row as u64 * self.size as u64) as f64,
        )
    }

    pub fn size_f(&self) -> f64 {
        self.size as f64
    }

    pub fn min_x(&self) -> f64 {
        self.origin().x
    }

    pub fn min_y(&self) -> f64 {
        self.origin().y
    }

    pub fn max_x(&self) -> f64 {
        self.min_x() + self.size_f()
    }

    pub fn max_y(&self) -> f64 {
        self.min_y() + self.size_f()
    }

    pub fn center(&self) -> Point {
        let half = 0.5 * self.size_f();
        self.origin() + Point::new(half, half)
    }

    /// Closed-rectangle membership, grown by `tol` on every side.
    pub fn contains(&self, q: Point, tol: f64) -> bool {
        q.x >= self.min_x() - tol
            && q.x <= self.max_x() + tol
            && q.y >= self.min_y() - tol
            && q.y <= self.max_y() + tol
    }

    pub fn contains_strict(&self, q: Point) -> bool {
        q.x > self.min_x() && q.x < self.max_x() && q.y > self.min_y() && q.y < self.max_y()
    }

    pub fn clamp(&self, q: Point) -> Point {
        Point::new(
            q.x.clamp(self.min_x(), self.max_x()),
            q.y.clamp(self.min_y(), self.max_y()),
        )
    }

    /// Center of the local pixel `(i, j)` in image coordinates.
    pub fn pixel_center(&self, i: usize, j: usize) -> Point {
        self.origin() + Point::new(j as f64 + 0.5, i as f64 + 0.5)
    }
}

/// Parameter of the orthogonal projection of `q` onto the supporting line,
/// with `0` at `l.a` and `1` at `l.b`.
pub fn projection_param(q: Point, l: &LineSegment) -> Result<f64, GeometryError> {
    if l.is_degenerate() {
        return Err(GeometryError::DegenerateSegment);
    }
    let u = l.direction();
    Ok((q - l.a).dot(u) / u.norm_sq())
}

/// Distance from `q` to the closest point of the closed segment.
pub fn point_segment_distance(q: Point, l: &LineSegment) -> f64 {
    match projection_param(q, l) {
        Ok(s) => q.distance(l.point_at(s.clamp(0.0, 1.0))),
        Err(_) => q.distance(l.a),
    }
}

/// Distance from `q` to the infinite supporting line of `l`.
///
/// A degenerate segment has no supporting line; the distance to its midpoint
/// is returned instead.
pub fn perpendicular_line_distance(q: Point, l: &LineSegment) -> f64 {
    if l.is_degenerate() {
        return q.distance(l.a.midpoint(l.b));
    }
    let u = l.direction();
    (u.cross(q - l.a)).abs() / u.norm()
}

/// Intersection of the two supporting lines, `None` when they are parallel.
pub fn segment_intersection(l1: &LineSegment, l2: &LineSegment) -> Option<Point> {
    let u = l1.direction();
    let v = l2.direction();
    let denom = u.cross(v);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let s = (l2.a - l1.a).cross(v) / denom;
    Some(l1.point_at(s))
}

/// Whether the two closed segments share at least one point.
pub fn segments_touch(l1: &LineSegment, l2: &LineSegment) -> bool {
    fn orient(p: Point, q: Point, r: Point) -> f64 {
        (q - p).cross(r - p)
    }
    fn on_segment(p: Point, l: &LineSegment) -> bool {
        point_segment_distance(p, l) <= DEGENERATE_EPS
    }
    let d1 = orient(l2.a, l2.b, l1.a);
    let d2 = orient(l2.a, l2.b, l1.b);
    let d3 = orient(l1.a, l1.b, l2.a);
    let d4 = orient(l1.a, l1.b, l2.b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(l1.a, l2) || on_segment(l1.b, l2) || on_segment(l2.a, l1) || on_segment(l2.b, l1)
}

/// Undirected acute angle between the supporting lines, in degrees `[0, 90]`.
pub fn angle_difference(l1: &LineSegment, l2: &LineSegment) -> Result<f64, GeometryError> {
    if l1.is_degenerate() || l2.is_degenerate() {
        return Err(GeometryError::DegenerateSegment);
    }
    let u = l1.direction();
    let v = l2.direction();
    // atan2 of |cross| and |dot| folds orientation and keeps precision near 0 and 90.
    let angle = u.cross(v).abs().atan2(u.dot(v).abs()).to_degrees();
    Ok(angle.clamp(0.0, 90.0))
}

/// Shortest distance between two closed segments.
pub fn shape_distance(l1: &LineSegment, l2: &LineSegment) -> f64 {
    if segments_touch(l1, l2) {
        return 0.0;
    }
    [
        point_segment_distance(l1.a, l2),
        point_segment_distance(l1.b, l2),
        point_segment_distance(l2.a, l1),
        point_segment_distance(l2.b, l1),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Liang–Barsky clip of the edge `p → q` against the closed rectangle.
/// Returns the parameter interval `[t0, t1]` that lies inside.
fn clip_edge(p: Point, q: Point, rect: &PatchRect) -> Option<(f64, f64)> {
    let d = q - p;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    let checks = [
        (-d.x, p.x - rect.min_x()),
        (d.x, rect.max_x() - p.x),
        (-d.y, p.y - rect.min_y()),
        (d.y, rect.max_y() - p.y),
    ];
    for (den, num) in checks {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

fn lerp(p: Point, q: Point, t: f64) -> Point {
    if t == 0.0 {
        p
    } else if t == 1.0 {
        q
    } else {
        p + (q - p) * t
    }
}

pub fn polyline_length(poly: &[Point]) -> f64 {
    poly.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Maximal connected sub-polylines of `poly` inside the closed rectangle,
/// in traversal order. Pieces that only touch the rectangle in a single
/// point are dropped. A closed polyline (first point equal to the last) is
/// treated as a loop, so a piece straddling the start is returned whole.
pub fn clip_polyline_to_rect(poly: &[Point], rect: &PatchRect) -> Vec<Vec<Point>> {
    let mut pieces: Vec<Vec<Point>> = Vec::new();
    if poly.len() < 2 {
        return pieces;
    }
    let mut current: Vec<Point> = Vec::new();
    // Whether `current` reaches the end of the previous edge.
    let mut open = false;
    let mut starts_at_origin = false;
    for (k, w) in poly.windows(2).enumerate() {
        let (p, q) = (w[0], w[1]);
        match clip_edge(p, q, rect) {
            Some((t0, t1)) => {
                let entry = lerp(p, q, t0);
                let exit = lerp(p, q, t1);
                if !(open && t0 == 0.0) {
                    if current.len() >= 2 {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    current.push(entry);
                    if k == 0 && t0 == 0.0 {
                        starts_at_origin = true;
                    }
                }
                if current.last() != Some(&exit) {
                    current.push(exit);
                }
                open = t1 == 1.0;
            }
            None => {
                if current.len() >= 2 {
                    pieces.push(std::mem::take(&mut current));
                }
                current.clear();
                open = false;
            }
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    let closed = poly.first() == poly.last();
    if closed && open && starts_at_origin && pieces.len() >= 2 {
        let head = pieces.remove(0);
        let tail = pieces.last_mut().expect("at least one piece remains");
        tail.extend(head.into_iter().skip(1));
    }
    pieces.retain(|piece| polyline_length(piece) > 0.0);
    pieces
}
