use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `deg` degrees, counter-clockwise from +x.
    pub fn from_heading(deg: f64) -> Self {
        let r = deg.to_radians();
        Self::new(r.cos(), r.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Heading of this vector in degrees, `[0, 360)`.
    pub fn heading(self) -> f64 {
        wrap_360(self.y.atan2(self.x).to_degrees())
    }

    /// Rotated 90° counter-clockwise.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Self {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

pub fn wrap_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

pub fn wrap_180(deg: f64) -> f64 {
    let w = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        -180.0
    } else {
        w
    }
}

/// Oriented rectangle given by its center, heading and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    /// Point in the rectangle's frame: `(forward, left)`.
    pub fn to_local(&self, p: Vec2) -> (f64, f64) {
        let f = Vec2::from_heading(self.heading);
        let d = p - self.center;
        (d.dot(f), d.dot(f.perp()))
    }

    /// Euclidean distance from `p` to the rectangle; zero inside.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let (u, v) = self.to_local(p);
        let du = (u.abs() - self.length / 2.0).max(0.0);
        let dv = (v.abs() - self.width / 2.0).max(0.0);
        du.hypot(dv)
    }

    /// Front-right and front-left corners.
    pub fn front_corners(&self) -> (Vec2, Vec2) {
        let f = Vec2::from_heading(self.heading);
        let l = f.perp();
        let front = self.center + f * (self.length / 2.0);
        (front - l * (self.width / 2.0), front + l * (self.width / 2.0))
    }

    pub fn front_center(&self) -> Vec2 {
        self.center + Vec2::from_heading(self.heading) * (self.length / 2.0)
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_heading(self.heading) * (self.length / 2.0);
        let l = Vec2::from_heading(self.heading).perp() * (self.width / 2.0);
        let c = self.center;
        [c + f - l, c + f + l, c - f + l, c - f - l]
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Piecewise-linear path with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Panics if fewer than two points are given or any segment is degenerate.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs two points");
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = w[0].dist(w[1]);
            assert!(d > 0.0, "degenerate polyline segment");
            cumulative.push(cumulative.last().expect("nonempty") + d);
        }
        Self { points, cumulative }
    }

    /// Resamples `n` points evenly spaced by arc length.
    pub fn resample(&self, n: usize) -> Polyline {
        let total = self.length();
        let pts = (0..n)
            .map(|i| self.point_at(total * i as f64 / (n - 1) as f64))
            .collect();
        Polyline::new(pts)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("nonempty")
    }

    pub fn arc_length_at(&self, index: usize) -> f64 {
        self.cumulative[index]
    }

    /// Segment index containing arc length `s` (clamped to the last segment).
    pub fn segment_at(&self, s: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(self.points.len() - 2)
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        self.points[i].lerp(self.points[i + 1], (s - self.cumulative[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        (self.points[i + 1] - self.points[i]).heading()
    }

    /// Signed turning rate (1/m, positive = left) around segment `index`.
    pub fn curvature_at(&self, index: usize) -> f64 {
        let last = self.points.len() - 2;
        let i = index.min(last);
        let (a, b) = if i == last {
            if last == 0 {
                return 0.0;
            }
            (i - 1, i)
        } else {
            (i, i + 1)
        };
        let h0 = (self.points[a + 1] - self.points[a]).heading();
        let h1 = (self.points[b + 1] - self.points[b]).heading();
        let span = (self.cumulative[b + 1] - self.cumulative[a]) / 2.0;
        wrap_180(h1 - h0).to_radians() / span
    }

    /// Arc length of the point on the path closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
            let d = p.dist(a + ab * t);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * ab.norm());
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_360(-90.0), 270.0);
        assert_eq!(wrap_360(360.0), 0.0);
        assert_eq!(wrap_180(180.0), -180.0);
        assert_eq!(wrap_180(190.0), -170.0);
        assert_eq!(wrap_180(-30.0), -30.0);
    }

    #[test]
    fn rect_distance() {
        let r = OrientedRect {
            center: Vec2::ZERO,
            heading: 0.0,
            length: 4.0,
            width: 2.0,
        };
        assert_eq!(r.distance_to(Vec2::new(0.5, 0.5)), 0.0);
        assert!((r.distance_to(Vec2::new(3.0, 0.0)) - 1.0).abs() < 1e-12);
        assert!((r.distance_to(Vec2::new(5.0, 5.0)) - 5.0).abs() < 1e-12);
        let turned = OrientedRect { heading: 90.0, ..r };
        assert!((turned.distance_to(Vec2::new(0.0, 3.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn front_corners_at_zero_heading() {
        let r = OrientedRect {
            center: Vec2::ZERO,
            heading: 0.0,
            length: 4.5,
            width: 2.0,
        };
        let (fr, fl) = r.front_corners();
        assert_eq!(fr, Vec2::new(2.25, -1.0));
        assert_eq!(fl, Vec2::new(2.25, 1.0));
    }

    #[test]
    fn polyline_lookup() {
        let p = Polyline::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(1.0, 2.0)]);
        assert_eq!(p.length(), 3.0);
        assert_eq!(p.point_at(2.0), Vec2::new(1.0, 1.0));
        assert_eq!(p.heading_at(0.5), 0.0);
        assert_eq!(p.heading_at(1.5), 90.0);
        assert_eq!(p.segment_at(1.0), 1);
        assert_eq!(p.segment_at(10.0), 1);
        assert!(p.curvature_at(0) > 0.0);
        assert!((p.project(Vec2::new(2.0, 1.5)) - 2.5).abs() < 1e-12);
    }
}
