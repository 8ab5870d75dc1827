//! Top-down rasterisation of the junction.
//!
//! Channel 0 is the drivable-area mask, channel 1 vehicle occupancy, and
//! channel 2 the signal aspect painted on each stop-line strip (green 1.0,
//! yellow 0.5, red 0.0). A vehicle is drawn when its centre lies inside the
//! frame; if no pixel centre falls inside its footprint, the pixel holding its
//! centre is lit so that no vehicle in view is ever invisible.

use crate::dynamics::{SegmentRef, Stage, VehicleState, World};
use crate::error::{Error, Result};
use crate::network::geometry::{approach_axes, lane_junction_point, lane_segment, movement_chord, pose_on, Vec2};
use crate::network::NetworkSpec;
use crate::signal::{aspect_idx, Aspect, SignalState};

pub const VEHICLE_WIDTH: f64 = 2.0;
const STOP_LINE_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterObs {
    pub resolution: usize,
    /// Metres covered by the frame.
    pub extent: f64,
    /// Row-major `resolution × resolution × 3`, channel last.
    pub pixels: Vec<f32>,
}

impl RasterObs {
    fn new(resolution: usize, extent: f64) -> RasterObs {
        RasterObs { resolution, extent, pixels: vec![0.0; resolution * resolution * 3] }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.resolution, self.resolution, 3]
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.pixels[(row * self.resolution + col) * 3 + ch]
    }

    fn paint(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let p = &mut self.pixels[(row * self.resolution + col) * 3 + ch];
        if value > *p {
            *p = value;
        }
    }

    pub fn channel_mass(&self, ch: usize) -> f64 {
        self.pixels.iter().skip(ch).step_by(3).map(|&v| v as f64).sum()
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, ch: usize) -> Vec<f32> {
        self.pixels.iter().skip(ch).step_by(3).copied().collect()
    }
}

/// Default side length: both opposing approaches plus the junction box.
pub fn default_extent(spec: &NetworkSpec) -> f64 {
    2.0 * (spec.max_incoming_length() + spec.junction_extent())
}

/// Maps world points onto a frame. `origin` is the world point at the
/// frame's bottom-centre for views, or centre for the BEV frame.
#[derive(Debug, Clone, Copy)]
struct Frame {
    /// World direction that points "up" in the image.
    up: Vec2,
    /// World direction that points "right" in the image.
    right: Vec2,
    /// Range of the up coordinate covered, [lo, hi].
    up_range: (f64, f64),
    /// Range of the right coordinate covered, [lo, hi].
    right_range: (f64, f64),
    res: usize,
}

impl Frame {
    fn bev(extent: f64, res: usize) -> Frame {
        let h = extent / 2.0;
        Frame {
            up: Vec2::new(0.0, 1.0),
            right: Vec2::new(1.0, 0.0),
            up_range: (-h, h),
            right_range: (-h, h),
            res,
        }
    }

    fn view(bearing_deg: f64, extent: f64, res: usize) -> Frame {
        let (u, r) = approach_axes(bearing_deg);
        let h = extent / 2.0;
        Frame { up: u, right: r, up_range: (0.0, h), right_range: (-h, h), res }
    }

    fn to_px(&self, p: Vec2) -> (f64, f64) {
        let d = p.dot(self.up);
        let s = p.dot(self.right);
        let res = self.res as f64;
        let col = (s - self.right_range.0) / (self.right_range.1 - self.right_range.0) * res;
        let row = (self.up_range.1 - d) / (self.up_range.1 - self.up_range.0) * res;
        (col, row)
    }

    fn to_world(&self, col: f64, row: f64) -> Vec2 {
        let res = self.res as f64;
        let s = self.right_range.0 + col / res * (self.right_range.1 - self.right_range.0);
        let d = self.up_range.1 - row / res * (self.up_range.1 - self.up_range.0);
        self.up.scale(d).add(self.right.scale(s))
    }

    fn contains(&self, p: Vec2) -> bool {
        let d = p.dot(self.up);
        let s = p.dot(self.right);
        d >= self.up_range.0 && d <= self.up_range.1 && s >= self.right_range.0 && s <= self.right_range.1
    }

    /// Fills an oriented rectangle. Returns the number of pixels whose centre it covers.
    fn fill_rect(
        &self,
        img: &mut RasterObs,
        center: Vec2,
        dir: Vec2,
        length: f64,
        width: f64,
        ch: usize,
        value: f32,
    ) -> usize {
        let perp = Vec2::new(-dir.y, dir.x);
        let (hl, hw) = (length / 2.0, width / 2.0);
        let corners = [
            center.add(dir.scale(hl)).add(perp.scale(hw)),
            center.add(dir.scale(hl)).sub(perp.scale(hw)),
            center.sub(dir.scale(hl)).add(perp.scale(hw)),
            center.sub(dir.scale(hl)).sub(perp.scale(hw)),
        ];
        let (mut c0, mut c1, mut r0, mut r1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in corners {
            let (col, row) = self.to_px(c);
            c0 = c0.min(col);
            c1 = c1.max(col);
            r0 = r0.min(row);
            r1 = r1.max(row);
        }
        let res = self.res as f64;
        let clamp = |v: f64| v.max(0.0).min(res);
        let (c0, c1) = (clamp(c0.floor()) as usize, clamp(c1.ceil()) as usize);
        let (r0, r1) = (clamp(r0.floor()) as usize, clamp(r1.ceil()) as usize);
        let mut hits = 0;
        for row in r0..r1 {
            for col in c0..c1 {
                let p = self.to_world(col as f64 + 0.5, row as f64 + 0.5).sub(center);
                if p.dot(dir).abs() <= hl && p.dot(perp).abs() <= hw {
                    img.paint(row, col, ch, value);
                    hits += 1;
                }
            }
        }
        hits
    }

    fn px_size(&self) -> f64 {
        let rows = self.up_range.1 - self.up_range.0;
        let cols = self.right_range.1 - self.right_range.0;
        rows.max(cols) / self.res as f64
    }

    fn paint_vehicle(&self, img: &mut RasterObs, center: Vec2, dir: Vec2, length: f64) {
        if !self.contains(center) {
            return;
        }
        if self.fill_rect(img, center, dir, length, VEHICLE_WIDTH, 1, 1.0) == 0 {
            let (col, row) = self.to_px(center);
            let last = self.res - 1;
            let col = (col.floor().max(0.0) as usize).min(last);
            let row = (row.floor().max(0.0) as usize).min(last);
            img.paint(row, col, 1, 1.0);
        }
    }
}

/// World-space centre and heading of a vehicle.
pub(crate) fn vehicle_pose(world: &World, seg: SegmentRef, v: &VehicleState) -> (Vec2, Vec2) {
    let spec = world.spec();
    let (front, dir) = match (seg, v.stage) {
        (SegmentRef::Lane(l), _) => pose_on(lane_segment(spec, l), v.position, spec.lane(l).length),
        (SegmentRef::Internal(m), _) => {
            pose_on(movement_chord(spec, m), v.position, spec.internal_length())
        }
    };
    debug_assert!(v.stage != Stage::Done);
    (front.sub(dir.scale(world.params().vehicle_length / 2.0)), dir)
}

fn lane_aspect_value(spec: &NetworkSpec, signal: &SignalState, lane: usize) -> f32 {
    let mut best = 0.0f32;
    for m in 0..spec.movements().len() {
        if spec.movement_from(m) != lane {
            continue;
        }
        let v = match aspect_idx(signal, m, spec) {
            Aspect::Green => 1.0,
            Aspect::Yellow => 0.5,
            Aspect::Red => 0.0,
        };
        best = best.max(v);
    }
    best
}

fn render(world: &World, signal: &SignalState, frame: &Frame, extent: f64) -> RasterObs {
    let spec = world.spec();
    let mut img = RasterObs::new(frame.res, extent);
    // Static features are at least one pixel thick so they survive coarse resolutions.
    let w = spec.lane_width().max(frame.px_size());
    let depth = STOP_LINE_DEPTH.max(frame.px_size());

    for l in 0..spec.lanes().len() {
        let (a, b) = lane_segment(spec, l);
        let center = a.add(b).scale(0.5);
        frame.fill_rect(&mut img, center, b.sub(a).normalized(), spec.lane(l).length, w, 0, 1.0);
    }
    let e = spec.junction_extent();
    frame.fill_rect(&mut img, Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 2.0 * e, 2.0 * e, 0, 1.0);

    for &l in spec.incoming_lanes() {
        let value = lane_aspect_value(spec, signal, l);
        if value > 0.0 {
            let (a, b) = lane_segment(spec, l);
            let dir = b.sub(a).normalized();
            let center = lane_junction_point(spec, l).sub(dir.scale(depth / 2.0));
            frame.fill_rect(&mut img, center, dir, depth, w, 2, value);
        }
    }

    let len = world.params().vehicle_length;
    for (seg, v) in world.vehicles() {
        let (center, dir) = vehicle_pose(world, seg, v);
        frame.paint_vehicle(&mut img, center, dir, len);
    }
    img
}

/// Orthographic top-down raster centred on the junction, north up.
pub fn bev_raster(world: &World, signal: &SignalState, resolution: usize, extent: f64) -> Result<RasterObs> {
    if resolution < 8 {
        return Err(Error::BadResolution(resolution));
    }
    if !(extent > 0.0) {
        return Err(Error::Config("raster extent must be positive".into()));
    }
    Ok(render(world, signal, &Frame::bev(extent, resolution), extent))
}

/// One raster per approach, rotated so the approach points up and cropped to
/// the half-plane on that approach's side of the junction centre.
pub fn multi_view_raster(
    world: &World,
    signal: &SignalState,
    resolution: usize,
    extent: f64,
) -> Result<Vec<RasterObs>> {
    if resolution < 8 {
        return Err(Error::BadResolution(resolution));
    }
    if world.spec().approaches().len() != 4 {
        return Err(Error::Config("multi-view observation needs exactly 4 approaches".into()));
    }
    Ok(world
        .spec()
        .approaches()
        .iter()
        .map(|a| render(world, signal, &Frame::view(a.heading.bearing_deg(), extent, resolution), extent))
        .collect())
}

/// Vehicle-channel mass inside the lateral band `|s| <= half_width` of a view.
pub fn view_near_band_mass(view: &RasterObs, half_width: f64) -> f64 {
    let res = view.resolution as f64;
    let mut mass = 0.0;
    for row in 0..view.resolution {
        for col in 0..view.resolution {
            let s = -view.extent / 2.0 + (col as f64 + 0.5) / res * view.extent;
            if s.abs() <= half_width {
                mass += view.get(row, col, 1) as f64;
            }
        }
    }
    mass
}
