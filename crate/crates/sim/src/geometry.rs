//! Planar geometry: poses, polylines with arc-length queries, polygons and
//! oriented rectangles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
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
        self.sub(o).norm()
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        Vec2::new(theta.cos(), theta.sin())
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let a = theta.sin().atan2(theta.cos());
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Expresses a world-frame pose in the frame of `self`.
    pub fn to_local(&self, p: Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Pose::new(
            c * dx + s * dy,
            -s * dx + c * dy,
            normalize_angle(p.heading - self.heading),
        )
    }

    /// Inverse of [`Pose::to_local`].
    pub fn to_world(&self, p: Pose) -> Pose {
        let (s, c) = self.heading.sin_cos();
        Pose::new(
            self.x + c * p.x - s * p.y,
            self.y + s * p.x + c * p.y,
            normalize_angle(p.heading + self.heading),
        )
    }
}

/// Result of projecting a point onto a [`Polyline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point, clamped to `[0, length]`.
    pub s: f64,
    /// Signed offset, positive to the left of the direction of travel.
    pub lateral: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<Vec2>> for Polyline {
    type Error = &'static str;

    fn try_from(points: Vec<Vec2>) -> Result<Self, Self::Error> {
        Polyline::new(points).ok_or("polyline needs at least two distinct points")
    }
}

impl From<Polyline> for Vec<Vec2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    /// `None` when fewer than two points are given or a segment is degenerate.
    pub fn new(points: Vec<Vec2>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let d = w[0].dist(w[1]);
            if !(d > 1e-9) {
                return None;
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Some(Self { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Pose at arc length `s` (clamped), heading along the segment.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = b.sub(a);
        let t = (s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]);
        let p = a.add(seg.scale(t));
        Pose::new(p.x, p.y, seg.y.atan2(seg.x))
    }

    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
        };
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let seg = self.points[i + 1].sub(a);
            let len2 = seg.dot(seg);
            let t = (p.sub(a).dot(seg) / len2).clamp(0.0, 1.0);
            let foot = a.add(seg.scale(t));
            let d = p.dist(foot);
            if d < best.distance {
                let side = seg.cross(p.sub(a));
                best = Projection {
                    s: self.cumulative[i] + t * len2.sqrt(),
                    lateral: if side >= 0.0 { d } else { -d },
                    distance: d,
                };
            }
        }
        best
    }

    /// Poses every `spacing` metres from the start, always including the end.
    pub fn resample(&self, spacing: f64) -> Vec<Pose> {
        let len = self.length();
        let n = (len / spacing).floor() as usize;
        let mut out: Vec<Pose> = (0..=n).map(|k| self.pose_at(k as f64 * spacing)).collect();
        if len - n as f64 * spacing > 1e-6 {
            out.push(self.pose_at(len));
        }
        out
    }

    /// Sub-polyline between arc lengths `s0 < s1`.
    pub fn slice(&self, s0: f64, s1: f64) -> Option<Polyline> {
        let s0 = s0.clamp(0.0, self.length());
        let s1 = s1.clamp(0.0, self.length());
        if s1 - s0 < 1e-6 {
            return None;
        }
        let mut pts = vec![self.pose_at(s0).position()];
        for (i, &c) in self.cumulative.iter().enumerate() {
            if c > s0 + 1e-9 && c < s1 - 1e-9 {
                pts.push(self.points[i]);
            }
        }
        pts.push(self.pose_at(s1).position());
        Polyline::new(pts)
    }
}

/// Simple polygon given by its vertices in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    /// Crossing-number containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
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

    /// Extent of the polygon along the vertical line through `x`: total
    /// length of the inside intervals.
    pub fn width_at(&self, x: f64) -> f64 {
        let v = &self.vertices;
        let mut ys = Vec::new();
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[j]);
            if (a.x > x) != (b.x > x) {
                ys.push(a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x));
            }
            j = i;
        }
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.chunks_exact(2).map(|c| c[1] - c[0]).sum()
    }
}

/// Oriented rectangle footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedRect {
    pub fn corners(&self) -> [Vec2; 4] {
        let f = Vec2::from_angle(self.heading).scale(self.length / 2.0);
        let l = Vec2::from_angle(self.heading + PI / 2.0).scale(self.width / 2.0);
        let c = self.center;
        [c.add(f).add(l), c.sub(f).add(l), c.sub(f).sub(l), c.add(f).sub(l)]
    }

    /// Strict interior containment.
    pub fn contains(&self, p: Vec2) -> bool {
        let d = p.sub(self.center);
        let u = Vec2::from_angle(self.heading);
        let lon = d.dot(u);
        let lat = u.cross(d);
        lon.abs() < self.length / 2.0 && lat.abs() < self.width / 2.0
    }

    /// Separating-axis overlap test; touching boundaries do not overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let a = self.corners();
        let b = other.corners();
        let axes = [
            Vec2::from_angle(self.heading),
            Vec2::from_angle(self.heading + PI / 2.0),
            Vec2::from_angle(other.heading),
            Vec2::from_angle(other.heading + PI / 2.0),
        ];
        axes.iter().all(|&ax| {
            let (amin, amax) = extent(&a, ax);
            let (bmin, bmax) = extent(&b, ax);
            amax > bmin && bmax > amin
        })
    }
}

fn extent(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Proper or touching intersection of segments `p1p2` and `q1q2`.
pub fn segment_intersection(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> Option<Vec2> {
    let r = p2.sub(p1);
    let s = q2.sub(q1);
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = q1.sub(p1);
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    let eps = 1e-9;
    if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
        Some(p1.add(r.scale(t)))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_uses_half_open_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(0.25)).abs() - 0.25 < 1e-15);
    }

    #[test]
    fn projection_reports_arc_length_and_side() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]).unwrap();
        assert_eq!(line.length(), 20.0);
        let p = line.project(Vec2::new(4.0, 1.5));
        assert!((p.s - 4.0).abs() < 1e-12 && (p.lateral - 1.5).abs() < 1e-12);
        let p = line.project(Vec2::new(11.0, 5.0));
        assert!((p.s - 15.0).abs() < 1e-12 && (p.lateral + 1.0).abs() < 1e-12);
        assert_eq!(line.pose_at(15.0), Pose::new(10.0, 5.0, PI / 2.0));
    }

    #[test]
    fn resample_keeps_endpoints() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)]).unwrap();
        let pts = line.resample(2.0);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts.last().unwrap().x, 5.0);
        let sub = line.slice(1.0, 3.5).unwrap();
        assert!((sub.length() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_polylines_are_rejected() {
        assert!(Polyline::new(vec![Vec2::new(1.0, 1.0)]).is_none());
        assert!(Polyline::new(vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)]).is_none());
    }

    #[test]
    fn frame_round_trip() {
        let ego = Pose::new(3.0, -2.0, 2.5);
        let p = Pose::new(-7.5, 4.0, -1.0);
        let back = ego.to_world(ego.to_local(p));
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
        assert!((back.heading - p.heading).abs() < 1e-12);
    }

    #[test]
    fn polygon_containment_and_width() {
        let sq = Polygon {
            vertices: vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(4.0, 0.0),
                Vec2::new(4.0, 2.0),
                Vec2::new(0.0, 2.0),
            ],
        };
        assert!(sq.contains(Vec2::new(1.0, 1.0)));
        assert!(!sq.contains(Vec2::new(5.0, 1.0)));
        assert!((sq.width_at(2.0) - 2.0).abs() < 1e-12);
    }
}
