//! Phase state machine and the classical controllers.
//!
//! All timing rules (minimum green, mandatory yellow) live in
//! [`request_phase`] and [`tick`]; the policies below only pick a phase.

use serde::{Deserialize, Serialize};

use crate::dynamics::World;
use crate::error::{Error, Result};
use crate::network::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aspect {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignalState {
    pub current_phase: usize,
    /// Time since the current green began, ms. Keeps counting through yellow.
    pub phase_elapsed_ms: u64,
    pub in_yellow: bool,
    pub yellow_remaining_ms: u64,
    pub pending_phase: Option<usize>,
}

impl SignalState {
    pub fn new(phase: usize) -> SignalState {
        SignalState {
            current_phase: phase,
            phase_elapsed_ms: 0,
            in_yellow: false,
            yellow_remaining_ms: 0,
            pending_phase: None,
        }
    }

    pub fn phase_elapsed_s(&self) -> f64 {
        self.phase_elapsed_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalTiming {
    pub min_green_ms: u64,
    pub yellow_ms: u64,
    pub delta_time_ms: u64,
}

impl Default for SignalTiming {
    fn default() -> Self {
        SignalTiming { min_green_ms: 10_000, yellow_ms: 2_000, delta_time_ms: 5_000 }
    }
}

impl SignalTiming {
    pub fn validate(&self, dt_ms: u64) -> Result<()> {
        if self.yellow_ms == 0 {
            return Err(Error::Config("yellow must be positive".into()));
        }
        if self.delta_time_ms == 0 || dt_ms == 0 || !self.delta_time_ms.is_multiple_of(dt_ms) {
            return Err(Error::Config("delta_time must be a positive multiple of dt".into()));
        }
        if !self.yellow_ms.is_multiple_of(dt_ms) {
            return Err(Error::Config("yellow must be a multiple of dt".into()));
        }
        if self.min_green_ms < self.delta_time_ms {
            return Err(Error::Config("min_green must be at least delta_time".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SotlParams {
    /// Activation threshold, vehicle·seconds.
    pub theta: f64,
    /// Platoons of at most this many vehicles are not cut.
    pub mu: usize,
    /// Platoon detection distance upstream of the stop line, m.
    pub omega: f64,
}

impl Default for SotlParams {
    fn default() -> Self {
        SotlParams { theta: 50.0, mu: 3, omega: 25.0 }
    }
}

impl SotlParams {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.theta > 0.0) || self.mu == 0 || !(self.omega > 0.0) {
            return Err(Error::Config("sotl parameters must be positive".into()));
        }
        let shortest = spec
            .incoming_lanes()
            .iter()
            .map(|&l| spec.lane(l).length)
            .fold(f64::INFINITY, f64::min);
        if self.omega > shortest {
            return Err(Error::Config(format!(
                "sotl.omega {} exceeds the shortest incoming lane ({shortest} m)",
                self.omega
            )));
        }
        Ok(())
    }
}

/// Applies a phase request. Same-phase requests, requests before minimum
/// green, and requests during a yellow are ignored.
pub fn request_phase(
    state: SignalState,
    target: usize,
    timing: &SignalTiming,
    phase_count: usize,
) -> Result<SignalState> {
    if target >= phase_count {
        return Err(Error::InvalidPhase(target));
    }
    if state.in_yellow
        || target == state.current_phase
        || state.phase_elapsed_ms < timing.min_green_ms
    {
        return Ok(state);
    }
    Ok(SignalState {
        in_yellow: true,
        yellow_remaining_ms: timing.yellow_ms,
        pending_phase: Some(target),
        ..state
    })
}

/// Advances the signal clock by one physics step. Returns true when a yellow
/// expired and the pending phase became green.
pub fn tick(state: &mut SignalState, dt_ms: u64) -> bool {
    state.phase_elapsed_ms += dt_ms;
    if !state.in_yellow {
        return false;
    }
    state.yellow_remaining_ms = state.yellow_remaining_ms.saturating_sub(dt_ms);
    if state.yellow_remaining_ms > 0 {
        return false;
    }
    state.current_phase = state.pending_phase.take().expect("yellow always has a target");
    state.in_yellow = false;
    state.phase_elapsed_ms = 0;
    true
}

pub fn aspect(state: &SignalState, movement: &str, spec: &NetworkSpec) -> Result<Aspect> {
    let m = spec
        .movement_index(movement)
        .ok_or_else(|| Error::UnknownMovement(movement.to_string()))?;
    Ok(aspect_idx(state, m, spec))
}

pub fn aspect_idx(state: &SignalState, movement: usize, spec: &NetworkSpec) -> Aspect {
    if spec.movement_in_phase(movement, state.current_phase) {
        if state.in_yellow {
            Aspect::Yellow
        } else {
            Aspect::Green
        }
    } else {
        Aspect::Red
    }
}

/// Phase of the plan slot covering `t_ms` modulo the cycle length.
pub fn fixed_time_policy(t_ms: u64, plan: &[(usize, u64)]) -> usize {
    let cycle: u64 = plan.iter().map(|&(_, d)| d).sum();
    if cycle == 0 {
        return plan.first().map_or(0, |&(p, _)| p);
    }
    let mut t = t_ms % cycle;
    for &(phase, dur) in plan {
        if t < dur {
            return phase;
        }
        t -= dur;
    }
    plan[plan.len() - 1].0
}

/// Default plan: every phase in index order with 30 s of green each.
pub fn default_fixed_plan(phase_count: usize) -> Vec<(usize, u64)> {
    (0..phase_count).map(|p| (p, 30_000)).collect()
}

/// Pressure of each phase: Σ over its movements of upstream minus downstream queue.
pub fn phase_pressures(world: &World) -> Vec<i64> {
    let spec = world.spec();
    (0..spec.phase_count())
        .map(|p| {
            spec.phase_movements(p)
                .iter()
                .map(|&m| {
                    world.queue_count_idx(spec.movement_from(m)) as i64
                        - world.queue_count_idx(spec.movement_to(m)) as i64
                })
                .sum()
        })
        .collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn max_pressure_policy(world: &World) -> usize {
    argmax_lowest(&phase_pressures(world))
}

/// Vehicles halted on red and vehicles close to a green stop line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SotlCounts {
    pub halted_on_red: usize,
    pub approaching_green: usize,
}

pub fn sotl_counts(world: &World, state: &SignalState, params: &SotlParams) -> SotlCounts {
    let spec = world.spec();
    let mut counts = SotlCounts { halted_on_red: 0, approaching_green: 0 };
    for &lane in spec.incoming_lanes() {
        for v in world.segment(crate::dynamics::SegmentRef::Lane(lane)) {
            match aspect_idx(state, v.movement, spec) {
                Aspect::Red => {
                    if v.speed < world.params().halt_threshold {
                        counts.halted_on_red += 1;
                    }
                }
                Aspect::Green => {
                    if world.distance_to_stop_line(lane, v) <= params.omega {
                        counts.approaching_green += 1;
                    }
                }
                Aspect::Yellow => {}
            }
        }
    }
    counts
}

/// Core SOTL rule on precomputed counts. Returns (switch, new kappa).
pub fn sotl_decide(
    counts: SotlCounts,
    state: &SignalState,
    params: &SotlParams,
    timing: &SignalTiming,
    kappa: f64,
) -> (bool, f64) {
    let kappa = kappa + timing.delta_time_ms as f64 / 1000.0 * counts.halted_on_red as f64;
    let platoon_guard = counts.approaching_green > 0 && counts.approaching_green <= params.mu;
    let switch = !state.in_yellow
        && kappa > params.theta
        && state.phase_elapsed_ms >= timing.min_green_ms
        && !platoon_guard;
    if switch {
        (true, 0.0)
    } else {
        (false, kappa)
    }
}

pub fn sotl_policy(
    world: &World,
    state: &SignalState,
    params: &SotlParams,
    timing: &SignalTiming,
    kappa: f64,
) -> (bool, f64) {
    sotl_decide(sotl_counts(world, state, params), state, params, timing, kappa)
}
