//! Vehicle kinematics: demand insertion, safe-speed car following, stop-line
//! compliance, junction traversal, and waiting-time bookkeeping.
//!
//! Vehicles live in segments. Every lane is a segment, and every movement owns
//! one internal segment of length `2 * junction_extent` that links its incoming
//! lane to its outgoing lane. Each segment keeps its vehicles front first, and
//! since there is no overtaking that order never changes.
//!
//! One call to [`World::advance`] is a synchronous update: every new speed is
//! computed from the state at the start of the step, then all positions move.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LaneKind, NetworkSpec};
use crate::signal::{aspect_idx, Aspect, SignalState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// m/s²
    pub accel_max: f64,
    /// m/s²
    pub decel_max: f64,
    /// m
    pub vehicle_length: f64,
    /// m
    pub min_gap: f64,
    /// Driver reaction time in seconds.
    pub tau: f64,
    /// Driver imperfection in [0, 1].
    pub sigma: f64,
    /// Vehicles strictly slower than this (m/s) are halting.
    pub halt_threshold: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            accel_max: 2.6,
            decel_max: 4.5,
            vehicle_length: 5.0,
            min_gap: 2.5,
            tau: 1.0,
            sigma: 0.0,
            halt_threshold: 0.1,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("accel_max", self.accel_max),
            ("decel_max", self.decel_max),
            ("vehicle_length", self.vehicle_length),
            ("min_gap", self.min_gap),
            ("tau", self.tau),
            ("halt_threshold", self.halt_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("dynamics.{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config("dynamics.sigma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub movement: String,
    /// vehicles per hour
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Approaching,
    Crossing,
    Departing,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub movement: usize,
    pub stage: Stage,
    /// Front-bumper position in metres from the start of the current segment.
    pub position: f64,
    pub speed: f64,
    /// Acceleration realised over the last step.
    pub accel: f64,
    pub depart_ms: u64,
    pub arrive_ms: Option<u64>,
    pub waiting_accum_ms: u64,
    /// End times of the halting steps still inside the accumulation window.
    waiting_window: VecDeque<u64>,
    held_at_line: bool,
}

impl VehicleState {
    fn new(id: u64, movement: usize, stage: Stage, position: f64, speed: f64, t_ms: u64) -> Self {
        VehicleState {
            id,
            movement,
            stage,
            position,
            speed,
            accel: 0.0,
            depart_ms: t_ms,
            arrive_ms: None,
            waiting_accum_ms: 0,
            waiting_window: VecDeque::new(),
            held_at_line: false,
        }
    }

    pub fn waiting_accum_s(&self) -> f64 {
        self.waiting_accum_ms as f64 / 1000.0
    }

    /// Halting steps inside the accumulation window.
    pub fn windowed_halting_steps(&self) -> usize {
        self.waiting_window.len()
    }

    pub fn travel_time_s(&self) -> Option<f64> {
        self.arrive_ms
            .map(|a| (a - self.depart_ms) as f64 / 1000.0)
    }
}

/// Largest speed that still lets the follower stop behind a leader braking at `decel_max`.
pub fn safe_speed(gap: f64, leader_speed: f64, params: &DynamicsParams) -> f64 {
    let b = params.decel_max;
    let bt = b * params.tau;
    let gap = gap.max(0.0);
    -bt + (bt * bt + leader_speed * leader_speed + 2.0 * b * gap).sqrt()
}

/// Krauss-style speed update. The result is also capped at `gap / dt` so a
/// follower never moves past where its leader stood at the start of the step.
/// With `sigma == 0` no random number is drawn.
pub fn car_following_update<R: Rng + ?Sized>(
    speed: f64,
    gap: f64,
    leader_speed: f64,
    speed_limit: f64,
    params: &DynamicsParams,
    dt: f64,
    rng: &mut R,
) -> f64 {
    let gap = gap.max(0.0);
    let v_safe = safe_speed(gap, leader_speed, params);
    let v_des = (speed + params.accel_max * dt)
        .min(speed_limit)
        .min(v_safe)
        .min(gap / dt);
    let v = if params.sigma > 0.0 {
        let u: f64 = rng.random();
        v_des - params.sigma * params.accel_max * dt * u
    } else {
        v_des
    };
    v.max(0.0)
}

/// Where a vehicle sits: a lane index, or the internal link of a movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentRef {
    Lane(usize),
    Internal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpawnCounters {
    pub spawned: u64,
    pub done: u64,
    pub in_network: u64,
    pub pending: u64,
}

#[derive(Debug, Clone)]
pub struct World {
    spec: Arc<NetworkSpec>,
    params: DynamicsParams,
    dt_ms: u64,
    window_ms: u64,
    time_ms: u64,
    /// (movement, per-step insertion probability)
    flows: Vec<(usize, f64)>,
    segments: Vec<VecDeque<VehicleState>>,
    pending: Vec<VecDeque<usize>>,
    next_id: u64,
    spawned_total: u64,
    done_total: u64,
    completed: Vec<VehicleState>,
}

impl World {
    pub fn new(
        spec: Arc<NetworkSpec>,
        params: DynamicsParams,
        flows: &[FlowSpec],
        dt_ms: u64,
        window_ms: u64,
    ) -> Result<World> {
        params.validate()?;
        if dt_ms == 0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        let dt = dt_ms as f64 / 1000.0;
        let mut resolved = Vec::with_capacity(flows.len());
        for f in flows {
            let m = spec
                .movement_index(&f.movement)
                .ok_or_else(|| Error::UnknownMovement(f.movement.clone()))?;
            if !(f.rate >= 0.0) {
                return Err(Error::Config(format!(
                    "flow rate for `{}` must be non-negative",
                    f.movement
                )));
            }
            let p = f.rate * dt / 3600.0;
            if p > 1.0 {
                return Err(Error::RateTooHigh { movement: f.movement.clone(), p });
            }
            resolved.push((m, p));
        }
        let n_seg = spec.lanes().len() + spec.movements().len();
        Ok(World {
            params,
            dt_ms,
            window_ms,
            time_ms: 0,
            flows: resolved,
            segments: vec![VecDeque::new(); n_seg],
            pending: vec![VecDeque::new(); spec.lanes().len()],
            next_id: 0,
            spawned_total: 0,
            done_total: 0,
            completed: Vec::new(),
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<NetworkSpec> {
        &self.spec
    }

    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    pub fn time_ms(&self) -> u64 {
        self.time_ms
    }

    pub fn dt_ms(&self) -> u64 {
        self.dt_ms
    }

    fn dt(&self) -> f64 {
        self.dt_ms as f64 / 1000.0
    }

    /// Removes every vehicle and zeroes the clock and counters.
    pub fn clear(&mut self) {
        for s in &mut self.segments {
            s.clear();
        }
        for p in &mut self.pending {
            p.clear();
        }
        self.time_ms = 0;
        self.next_id = 0;
        self.spawned_total = 0;
        self.done_total = 0;
        self.completed.clear();
    }

    fn seg_index(&self, seg: SegmentRef) -> usize {
        match seg {
            SegmentRef::Lane(l) => l,
            SegmentRef::Internal(m) => self.spec.lanes().len() + m,
        }
    }

    fn seg_ref(&self, idx: usize) -> SegmentRef {
        let n = self.spec.lanes().len();
        if idx < n {
            SegmentRef::Lane(idx)
        } else {
            SegmentRef::Internal(idx - n)
        }
    }

    fn seg_length(&self, idx: usize) -> f64 {
        let n = self.spec.lanes().len();
        if idx < n {
            self.spec.lane(idx).length
        } else {
            self.spec.internal_length()
        }
    }

    /// Vehicles on a segment, front first.
    pub fn segment(&self, seg: SegmentRef) -> &VecDeque<VehicleState> {
        &self.segments[self.seg_index(seg)]
    }

    /// Every vehicle in the network with the segment it occupies.
    pub fn vehicles(&self) -> impl Iterator<Item = (SegmentRef, &VehicleState)> + '_ {
        self.segments
            .iter()
            .enumerate()
            .flat_map(move |(i, s)| s.iter().map(move |v| (self.seg_ref(i), v)))
    }

    pub fn vehicle_count(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.iter().map(|p| p.len()).sum()
    }

    pub fn counters(&self) -> SpawnCounters {
        SpawnCounters {
            spawned: self.spawned_total,
            done: self.done_total,
            in_network: self.vehicle_count() as u64,
            pending: self.pending_count() as u64,
        }
    }

    /// Vehicles that reached the end of their outgoing lane during the last advance.
    pub fn completed_last_step(&self) -> &[VehicleState] {
        &self.completed
    }

    /// Places a vehicle directly, keeping the segment ordered. Used to build
    /// hand-made worlds; counts as a spawn for conservation purposes.
    pub fn place_vehicle(&mut self, movement: usize, stage: Stage, position: f64, speed: f64) -> Result<u64> {
        if movement >= self.spec.movements().len() {
            return Err(Error::UnknownMovement(movement.to_string()));
        }
        let seg = match stage {
            Stage::Approaching => SegmentRef::Lane(self.spec.movement_from(movement)),
            Stage::Crossing => SegmentRef::Internal(movement),
            Stage::Departing => SegmentRef::Lane(self.spec.movement_to(movement)),
            Stage::Done => return Err(Error::Config("cannot place a finished vehicle".into())),
        };
        let idx = self.seg_index(seg);
        let len = self.seg_length(idx);
        if !(0.0..=len).contains(&position) {
            return Err(Error::Config(format!("position {position} outside segment of length {len}")));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.spawned_total += 1;
        let v = VehicleState::new(id, movement, stage, position, speed.max(0.0), self.time_ms);
        let s = &mut self.segments[idx];
        let at = s.iter().position(|o| o.position < position).unwrap_or(s.len());
        s.insert(at, v);
        Ok(id)
    }

    /// Draws new arrivals for every flow and inserts queued vehicles whose lane
    /// entrance is free (at most one per lane per step). Returns the vehicles
    /// inserted this step.
    pub fn spawn_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<VehicleState>> {
        for &(m, p) in &self.flows {
            let u: f64 = rng.random();
            if u < p {
                self.pending[self.spec.movement_from(m)].push_back(m);
                self.spawned_total += 1;
            }
        }
        let clearance = self.params.vehicle_length + self.params.min_gap;
        let mut inserted = Vec::new();
        for lane in 0..self.pending.len() {
            let Some(&m) = self.pending[lane].front() else { continue };
            let free = self.segments[lane]
                .back()
                .is_none_or(|last| last.position >= clearance);
            if free {
                self.pending[lane].pop_front();
                let v = VehicleState::new(self.next_id, m, Stage::Approaching, 0.0, 0.0, self.time_ms);
                self.next_id += 1;
                inserted.push(v.clone());
                self.segments[lane].push_back(v);
            }
        }
        Ok(inserted)
    }

    /// Closest constraint ahead of vehicle `i` in segment `si` as (gap, leader speed).
    fn leader_constraint(
        &self,
        si: usize,
        i: usize,
        blocked: &[bool],
        signal: &SignalState,
    ) -> (f64, f64, bool) {
        let p = &self.params;
        let dt = self.dt();
        let spacing = p.vehicle_length + p.min_gap;
        let seg = &self.segments[si];
        let ego = &seg[i];
        let seg_len = self.seg_length(si);
        let n_lanes = self.spec.lanes().len();

        let mut best_gap = f64::INFINITY;
        let mut best_speed = 0.0;
        let mut best_v = f64::INFINITY;
        let mut held = false;
        let mut consider = |gap: f64, lead_speed: f64, is_line: bool| {
            let v = safe_speed(gap, lead_speed, p).min(gap.max(0.0) / dt);
            if v < best_v {
                best_v = v;
                best_gap = gap;
                best_speed = lead_speed;
                held = is_line;
            }
        };

        if i > 0 {
            let lead = &seg[i - 1];
            consider(lead.position - spacing - ego.position, lead.speed, false);
        }

        match ego.stage {
            Stage::Approaching => {
                let dist = seg_len - ego.position;
                if i == 0 {
                    let link = n_lanes + ego.movement;
                    if let Some(last) = self.segments[link].back() {
                        consider(dist + last.position - spacing, last.speed, false);
                    } else {
                        let out = self.spec.movement_to(ego.movement);
                        if let Some(last) = self.segments[out].back() {
                            consider(
                                dist + self.spec.internal_length() + last.position - spacing,
                                last.speed,
                                false,
                            );
                        }
                    }
                }
                let must_stop = match aspect_idx(signal, ego.movement, &self.spec) {
                    Aspect::Red => true,
                    Aspect::Yellow => {
                        ego.speed * ego.speed / (2.0 * p.decel_max) <= dist
                    }
                    Aspect::Green => blocked[ego.movement],
                };
                if must_stop {
                    consider(dist, 0.0, true);
                }
            }
            Stage::Crossing => {
                let remaining = seg_len - ego.position;
                let out = self.spec.movement_to(ego.movement);
                if i == 0 {
                    if let Some(last) = self.segments[out].back() {
                        consider(remaining + last.position - spacing, last.speed, false);
                    }
                }
                // Merging links feeding the same outgoing lane: order by
                // distance to the merge, lower movement index first on ties.
                for m in 0..self.spec.movements().len() {
                    if m == ego.movement || self.spec.movement_to(m) != out {
                        continue;
                    }
                    for other in self.segments[n_lanes + m].iter().rev() {
                        let r = seg_len - other.position;
                        let ahead = r < remaining || (r == remaining && m < ego.movement);
                        if ahead {
                            consider(remaining - r - spacing, other.speed, false);
                            break;
                        }
                    }
                }
            }
            Stage::Departing | Stage::Done => {}
        }
        (best_gap, best_speed, held)
    }

    /// One physics step of length dt.
    pub fn advance<R: Rng + ?Sized>(&mut self, signal: &SignalState, rng: &mut R) {
        let dt = self.dt();
        let n_lanes = self.spec.lanes().len();
        let n_mov = self.spec.movements().len();
        self.completed.clear();

        // A green movement still yields while a conflicting movement's link is occupied.
        let occupied: Vec<bool> = (0..n_mov).map(|m| !self.segments[n_lanes + m].is_empty()).collect();
        let blocked: Vec<bool> = (0..n_mov)
            .map(|m| (0..n_mov).any(|o| occupied[o] && o != m && self.spec.movements_conflict(m, o)))
            .collect();

        let mut updates: Vec<Vec<(f64, bool)>> = Vec::with_capacity(self.segments.len());
        for si in 0..self.segments.len() {
            let limit = if si < n_lanes {
                self.spec.lane(si).speed_limit
            } else {
                let m = si - n_lanes;
                self.spec
                    .lane(self.spec.movement_from(m))
                    .speed_limit
                    .min(self.spec.lane(self.spec.movement_to(m)).speed_limit)
            };
            let mut seg_updates = Vec::with_capacity(self.segments[si].len());
            for i in 0..self.segments[si].len() {
                let (gap, lead_speed, held) = self.leader_constraint(si, i, &blocked, signal);
                let v = car_following_update(
                    self.segments[si][i].speed,
                    gap,
                    lead_speed,
                    limit,
                    &self.params,
                    dt,
                    rng,
                );
                seg_updates.push((v, held));
            }
            updates.push(seg_updates);
        }

        for (si, seg_updates) in updates.into_iter().enumerate() {
            for (v, (speed, held)) in self.segments[si].iter_mut().zip(seg_updates) {
                v.accel = (speed - v.speed) / dt;
                v.speed = speed;
                v.position += speed * dt;
                v.held_at_line = held;
            }
        }

        let t_end = self.time_ms + self.dt_ms;
        // Downstream first so that each vehicle moves forward at most through a chain of transfers.
        let mut order: Vec<usize> = self.spec.outgoing_lanes().to_vec();
        order.extend(n_lanes..n_lanes + n_mov);
        order.extend(self.spec.incoming_lanes().iter().copied());
        for si in order {
            loop {
                let len = self.seg_length(si);
                let Some(front) = self.segments[si].front() else { break };
                if front.position < len || (front.stage == Stage::Approaching && front.held_at_line) {
                    if front.position > len {
                        self.segments[si][0].position = len;
                    }
                    break;
                }
                let mut v = self.segments[si].pop_front().expect("front exists");
                self.route_forward(&mut v, len, t_end);
            }
        }

        for &lane in self.spec.incoming_lanes() {
            for v in self.segments[lane].iter_mut() {
                if v.speed < self.params.halt_threshold {
                    v.waiting_accum_ms += self.dt_ms;
                    v.waiting_window.push_back(t_end);
                }
                while let Some(&t0) = v.waiting_window.front() {
                    if t0 + self.window_ms <= t_end {
                        v.waiting_window.pop_front();
                    } else {
                        break;
                    }
                }
            }
        }
        self.time_ms = t_end;
    }

    fn route_forward(&mut self, v: &mut VehicleState, mut len: f64, t_end: u64) {
        let n_lanes = self.spec.lanes().len();
        loop {
            v.position -= len;
            let next = match v.stage {
                Stage::Approaching => {
                    v.stage = Stage::Crossing;
                    n_lanes + v.movement
                }
                Stage::Crossing => {
                    v.stage = Stage::Departing;
                    self.spec.movement_to(v.movement)
                }
                Stage::Departing | Stage::Done => {
                    v.stage = Stage::Done;
                    v.arrive_ms = Some(t_end);
                    v.position = 0.0;
                    self.done_total += 1;
                    self.completed.push(v.clone());
                    return;
                }
            };
            len = self.seg_length(next);
            if v.position < len {
                let seg = &mut self.segments[next];
                let at = seg.iter().rposition(|o| o.position >= v.position).map_or(0, |p| p + 1);
                seg.insert(at, v.clone());
                return;
            }
        }
    }

    fn lane_checked(&self, lane: &str) -> Result<usize> {
        self.spec
            .lane_index(lane)
            .ok_or_else(|| Error::UnknownLane(lane.to_string()))
    }

    /// Halting vehicles on a lane (speed strictly below the halt threshold).
    pub fn queue_count(&self, lane: &str) -> Result<usize> {
        Ok(self.queue_count_idx(self.lane_checked(lane)?))
    }

    pub fn queue_count_idx(&self, lane: usize) -> usize {
        self.segments[lane]
            .iter()
            .filter(|v| v.speed < self.params.halt_threshold)
            .count()
    }

    /// Vehicle count over lane capacity, clamped to [0, 1].
    pub fn lane_density(&self, lane: &str) -> Result<f64> {
        Ok(self.lane_density_idx(self.lane_checked(lane)?))
    }

    pub fn lane_density_idx(&self, lane: usize) -> f64 {
        let cap = self.spec.lane(lane).capacity as f64;
        (self.segments[lane].len() as f64 / cap).clamp(0.0, 1.0)
    }

    /// Σ over incoming-lane vehicles of their windowed waiting time, in ms.
    pub fn windowed_waiting_ms(&self) -> u64 {
        self.spec
            .incoming_lanes()
            .iter()
            .flat_map(|&l| self.segments[l].iter())
            .map(|v| v.waiting_window.len() as u64 * self.dt_ms)
            .sum()
    }

    pub fn total_incoming_queue(&self) -> usize {
        self.spec
            .incoming_lanes()
            .iter()
            .map(|&l| self.queue_count_idx(l))
            .sum()
    }

    /// Distance from the stop line for a vehicle on an incoming lane.
    pub fn distance_to_stop_line(&self, lane: usize, v: &VehicleState) -> f64 {
        debug_assert_eq!(self.spec.lane(lane).kind, LaneKind::Incoming);
        self.spec.lane(lane).length - v.position
    }

    /// Hash of the full dynamic state; equal digests mean bit-equal states.
    pub fn state_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.time_ms.hash(&mut h);
        self.spawned_total.hash(&mut h);
        self.done_total.hash(&mut h);
        for (i, seg) in self.segments.iter().enumerate() {
            i.hash(&mut h);
            seg.len().hash(&mut h);
            for v in seg {
                v.id.hash(&mut h);
                v.movement.hash(&mut h);
                v.stage.hash(&mut h);
                v.position.to_bits().hash(&mut h);
                v.speed.to_bits().hash(&mut h);
                v.waiting_accum_ms.hash(&mut h);
                v.waiting_window.len().hash(&mut h);
            }
        }
        for p in &self.pending {
            p.hash(&mut h);
        }
        h.finish()
    }

    /// Human-readable segment name: lane id, or `:<movement id>` for internal links.
    pub fn segment_label(&self, seg: SegmentRef) -> String {
        match seg {
            SegmentRef::Lane(l) => self.spec.lane(l).id.clone(),
            SegmentRef::Internal(m) => format!(":{}", self.spec.movements()[m].id),
        }
    }
}
