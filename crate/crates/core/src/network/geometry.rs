//! Planar layout of the junction. The centre sits at the origin, x points
//! east and y north. Traffic keeps right: an approach's incoming lanes lie on
//! the right-hand side of vehicles heading towards the centre.

use super::{LaneKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Vec2 {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            self
        }
    }
}

/// Outward unit vector `u` of an approach and its lateral axis `r`
/// (u rotated a quarter turn clockwise).
pub fn approach_axes(bearing_deg: f64) -> (Vec2, Vec2) {
    let th = bearing_deg.to_radians();
    let u = Vec2::new(th.sin(), th.cos());
    // Snap tiny residues so cardinal headings stay exact.
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    let u = Vec2::new(snap(u.x), snap(u.y));
    (u, Vec2::new(u.y, -u.x))
}

fn lane_axes(spec: &NetworkSpec, lane: usize) -> (Vec2, Vec2) {
    let info = spec.lane(lane);
    let (u, r) = approach_axes(spec.approaches()[info.approach].heading.bearing_deg());
    let lateral = (info.slot as f64 + 0.5) * spec.lane_width();
    let off = match info.kind {
        LaneKind::Incoming => r.scale(-lateral),
        LaneKind::Outgoing => r.scale(lateral),
    };
    (u, off)
}

/// Point where the lane meets the junction box (stop line for incoming lanes).
pub fn lane_junction_point(spec: &NetworkSpec, lane: usize) -> Vec2 {
    let (u, off) = lane_axes(spec, lane);
    u.scale(spec.junction_extent()).add(off)
}

/// Far end of the lane, away from the junction.
pub fn lane_far_point(spec: &NetworkSpec, lane: usize) -> Vec2 {
    let (u, off) = lane_axes(spec, lane);
    u.scale(spec.junction_extent() + spec.lane(lane).length).add(off)
}

/// Start and end points of a lane in driving direction.
pub fn lane_segment(spec: &NetworkSpec, lane: usize) -> (Vec2, Vec2) {
    match spec.lane(lane).kind {
        LaneKind::Incoming => (lane_far_point(spec, lane), lane_junction_point(spec, lane)),
        LaneKind::Outgoing => (lane_junction_point(spec, lane), lane_far_point(spec, lane)),
    }
}

/// Straight chord a movement follows across the junction box.
pub fn movement_chord(spec: &NetworkSpec, m: usize) -> (Vec2, Vec2) {
    (
        lane_junction_point(spec, spec.movement_from(m)),
        lane_junction_point(spec, spec.movement_to(m)),
    )
}

/// Point and unit heading at `pos` metres along a segment of nominal length `len`.
pub fn pose_on(seg: (Vec2, Vec2), pos: f64, len: f64) -> (Vec2, Vec2) {
    let d = seg.1.sub(seg.0);
    let frac = if len > 0.0 { pos / len } else { 0.0 };
    (seg.0.add(d.scale(frac)), d.normalized())
}

const EPS: f64 = 1e-9;

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) - EPS
        && p.x <= a.x.max(b.x) + EPS
        && p.y >= a.y.min(b.y) - EPS
        && p.y <= a.y.max(b.y) + EPS
}

/// Closed-segment intersection test, touching endpoints included.
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
        && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
    {
        return true;
    }
    (d1.abs() <= EPS && on_segment(q1, q2, p1))
        || (d2.abs() <= EPS && on_segment(q1, q2, p2))
        || (d3.abs() <= EPS && on_segment(p1, p2, q1))
        || (d4.abs() <= EPS && on_segment(p1, p2, q2))
}

/// Movement conflict matrix: chords that cross, movements merging into the
/// same outgoing lane, and the explicitly declared pairs. Movements leaving
/// the same incoming lane share a start point but do not conflict.
pub(super) fn conflict_matrix(spec: &NetworkSpec) -> Vec<Vec<bool>> {
    let n = spec.movements().len();
    let chords: Vec<_> = (0..n).map(|m| movement_chord(spec, m)).collect();
    let mut c = vec![vec![false; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let hit = if spec.movement_to(a) == spec.movement_to(b) {
                true
            } else if spec.movement_from(a) == spec.movement_from(b) {
                false
            } else {
                segments_intersect(chords[a].0, chords[a].1, chords[b].0, chords[b].1)
            };
            c[a][b] = hit;
            c[b][a] = hit;
        }
    }
    for (x, y) in spec.declared_conflicts() {
        if let (Some(a), Some(b)) = (spec.movement_index(x), spec.movement_index(y)) {
            if a != b {
                c[a][b] = true;
                c[b][a] = true;
            }
        }
    }
    c
}
