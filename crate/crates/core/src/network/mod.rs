//! Static road topology for a single signalized junction.
//!
//! A [`NetworkSpec`] is immutable once built. Construction goes through
//! [`NetworkSpec::new`], which validates every reference and phase and
//! precomputes the index tables the simulator works from (flat lane table,
//! movement endpoints, phase membership, conflict matrix).

mod doc;
pub mod geometry;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use doc::{load_network, serialize_network, ScenarioDoc};

pub const DEFAULT_JUNCTION_EXTENT: f64 = 20.0;
pub const DEFAULT_LANE_WIDTH: f64 = 3.2;

/// Where an approach sits relative to the junction centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heading {
    N,
    E,
    S,
    W,
    /// Compass bearing in degrees, clockwise from north.
    Degrees(f64),
}

impl Heading {
    pub fn bearing_deg(self) -> f64 {
        match self {
            Heading::N => 0.0,
            Heading::E => 90.0,
            Heading::S => 180.0,
            Heading::W => 270.0,
            Heading::Degrees(d) => d,
        }
    }

    pub fn from_token(token: &str) -> Option<Heading> {
        match token {
            "N" | "n" => Some(Heading::N),
            "E" | "e" => Some(Heading::E),
            "S" | "s" => Some(Heading::S),
            "W" | "w" => Some(Heading::W),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub length: f64,
    pub speed_limit: f64,
    pub capacity_vehicles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Approach {
    pub id: String,
    pub heading: Heading,
    pub incoming_lanes: Vec<Lane>,
    pub outgoing_lanes: Vec<Lane>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Through,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    pub id: String,
    pub from_lane: String,
    pub to_lane: String,
    pub turn: Turn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub index: usize,
    pub movements: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneKind {
    Incoming,
    Outgoing,
}

/// Flattened view of one lane, addressed by its index in [`NetworkSpec::lanes`].
#[derive(Debug, Clone, PartialEq)]
pub struct LaneInfo {
    pub id: String,
    pub length: f64,
    pub speed_limit: f64,
    pub capacity: usize,
    pub approach: usize,
    pub kind: LaneKind,
    /// Position within the approach's incoming or outgoing list, 0 nearest the centreline.
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    approaches: Vec<Approach>,
    movements: Vec<Movement>,
    green_phases: Vec<Phase>,
    junction_extent: f64,
    lane_width: f64,
    declared_conflicts: Vec<(String, String)>,

    lanes: Vec<LaneInfo>,
    lane_by_id: HashMap<String, usize>,
    movement_by_id: HashMap<String, usize>,
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
    movement_from: Vec<usize>,
    movement_to: Vec<usize>,
    phase_movements: Vec<Vec<usize>>,
    movement_phases: Vec<Vec<usize>>,
    conflicts: Vec<Vec<bool>>,
}

/// Number of vehicles a lane holds bumper to bumper at standstill.
pub fn lane_capacity(length: f64, vehicle_length: f64, min_gap: f64) -> usize {
    (length / (vehicle_length + min_gap)).floor() as usize
}

impl NetworkSpec {
    /// Validates the topology and builds the lookup tables.
    pub fn new(
        approaches: Vec<Approach>,
        movements: Vec<Movement>,
        green_phases: Vec<Phase>,
        junction_extent: f64,
        lane_width: f64,
        declared_conflicts: Vec<(String, String)>,
    ) -> Result<NetworkSpec> {
        if !(junction_extent > 0.0) {
            return Err(Error::InvalidNetwork("junction_extent must be positive".into()));
        }
        if !(lane_width > 0.0) {
            return Err(Error::InvalidNetwork("lane_width must be positive".into()));
        }

        let mut lanes = Vec::new();
        let mut lane_by_id = HashMap::new();
        let mut incoming = Vec::new();
        let mut outgoing = Vec::new();
        let mut approach_ids = BTreeSet::new();
        for (ai, approach) in approaches.iter().enumerate() {
            if !approach_ids.insert(approach.id.clone()) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate approach id `{}`",
                    approach.id
                )));
            }
            let groups = [
                (LaneKind::Incoming, &approach.incoming_lanes),
                (LaneKind::Outgoing, &approach.outgoing_lanes),
            ];
            for (kind, group) in groups {
                for (slot, lane) in group.iter().enumerate() {
                    if !(lane.length > 0.0) {
                        return Err(Error::InvalidNetwork(format!(
                            "lane `{}` must have positive length",
                            lane.id
                        )));
                    }
                    if !(lane.speed_limit > 0.0) {
                        return Err(Error::InvalidNetwork(format!(
                            "lane `{}` must have positive speed limit",
                            lane.id
                        )));
                    }
                    if lane.capacity_vehicles < 1 {
                        return Err(Error::InvalidNetwork(format!(
                            "lane `{}` is too short to hold a vehicle",
                            lane.id
                        )));
                    }
                    let idx = lanes.len();
                    if lane_by_id.insert(lane.id.clone(), idx).is_some() {
                        return Err(Error::InvalidNetwork(format!(
                            "duplicate lane id `{}`",
                            lane.id
                        )));
                    }
                    lanes.push(LaneInfo {
                        id: lane.id.clone(),
                        length: lane.length,
                        speed_limit: lane.speed_limit,
                        capacity: lane.capacity_vehicles,
                        approach: ai,
                        kind,
                        slot,
                    });
                    match kind {
                        LaneKind::Incoming => incoming.push(idx),
                        LaneKind::Outgoing => outgoing.push(idx),
                    }
                }
            }
        }

        let mut movement_by_id = HashMap::new();
        let mut movement_from = Vec::with_capacity(movements.len());
        let mut movement_to = Vec::with_capacity(movements.len());
        for (mi, m) in movements.iter().enumerate() {
            if movement_by_id.insert(m.id.clone(), mi).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate movement id `{}`", m.id)));
            }
            let from = *lane_by_id.get(&m.from_lane).ok_or_else(|| {
                Error::DanglingReference(format!(
                    "movement `{}` references unknown lane `{}`",
                    m.id, m.from_lane
                ))
            })?;
            let to = *lane_by_id.get(&m.to_lane).ok_or_else(|| {
                Error::DanglingReference(format!(
                    "movement `{}` references unknown lane `{}`",
                    m.id, m.to_lane
                ))
            })?;
            if lanes[from].kind != LaneKind::Incoming {
                return Err(Error::InvalidNetwork(format!(
                    "movement `{}` must start on an incoming lane",
                    m.id
                )));
            }
            if lanes[to].kind != LaneKind::Outgoing {
                return Err(Error::InvalidNetwork(format!(
                    "movement `{}` must end on an outgoing lane",
                    m.id
                )));
            }
            movement_from.push(from);
            movement_to.push(to);
        }

        let mut spec = NetworkSpec {
            approaches,
            movements,
            green_phases,
            junction_extent,
            lane_width,
            declared_conflicts,
            lanes,
            lane_by_id,
            movement_by_id,
            incoming,
            outgoing,
            movement_from,
            movement_to,
            phase_movements: Vec::new(),
            movement_phases: Vec::new(),
            conflicts: Vec::new(),
        };

        for (a, b) in &spec.declared_conflicts {
            for id in [a, b] {
                if !spec.movement_by_id.contains_key(id) {
                    return Err(Error::DanglingReference(format!(
                        "conflict pair references unknown movement `{id}`"
                    )));
                }
            }
        }
        spec.conflicts = geometry::conflict_matrix(&spec);

        if spec.green_phases.len() < 2 {
            return Err(Error::InvalidNetwork("at least two green phases are required".into()));
        }
        let mut phase_movements = Vec::with_capacity(spec.green_phases.len());
        let mut movement_phases = vec![Vec::new(); spec.movements.len()];
        for (pi, phase) in spec.green_phases.iter().enumerate() {
            if phase.index != pi {
                return Err(Error::InvalidNetwork(format!(
                    "phase indices must be dense from 0; found {} at position {pi}",
                    phase.index
                )));
            }
            if phase.movements.is_empty() {
                return Err(Error::EmptyPhase(pi));
            }
            let mut members: Vec<usize> = Vec::with_capacity(phase.movements.len());
            for id in &phase.movements {
                let m = *spec.movement_by_id.get(id).ok_or_else(|| {
                    Error::DanglingReference(format!("phase {pi} references unknown movement `{id}`"))
                })?;
                if !members.contains(&m) {
                    members.push(m);
                }
            }
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    if spec.conflicts[a][b] {
                        return Err(Error::ConflictingPhase {
                            phase: pi,
                            a: spec.movements[a].id.clone(),
                            b: spec.movements[b].id.clone(),
                        });
                    }
                }
            }
            for &m in &members {
                movement_phases[m].push(pi);
            }
            phase_movements.push(members);
        }
        if let Some(m) = movement_phases.iter().position(|p| p.is_empty()) {
            return Err(Error::InvalidNetwork(format!(
                "movement `{}` is not served by any phase",
                spec.movements[m].id
            )));
        }
        spec.phase_movements = phase_movements;
        spec.movement_phases = movement_phases;
        Ok(spec)
    }

    pub fn approaches(&self) -> &[Approach] {
        &self.approaches
    }

    pub fn movements(&self) -> &[Movement] {
        &self.movements
    }

    pub fn green_phases(&self) -> &[Phase] {
        &self.green_phases
    }

    pub fn phase_count(&self) -> usize {
        self.green_phases.len()
    }

    pub fn junction_extent(&self) -> f64 {
        self.junction_extent
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn declared_conflicts(&self) -> &[(String, String)] {
        &self.declared_conflicts
    }

    /// Length of the internal link every movement traverses inside the junction box.
    pub fn internal_length(&self) -> f64 {
        2.0 * self.junction_extent
    }

    pub fn lanes(&self) -> &[LaneInfo] {
        &self.lanes
    }

    pub fn lane(&self, idx: usize) -> &LaneInfo {
        &self.lanes[idx]
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.lane_by_id.get(id).copied()
    }

    pub fn movement_index(&self, id: &str) -> Option<usize> {
        self.movement_by_id.get(id).copied()
    }

    /// Incoming lanes in the fixed observation order (approach order, then slot).
    pub fn incoming_lanes(&self) -> &[usize] {
        &self.incoming
    }

    pub fn outgoing_lanes(&self) -> &[usize] {
        &self.outgoing
    }

    pub fn movement_from(&self, m: usize) -> usize {
        self.movement_from[m]
    }

    pub fn movement_to(&self, m: usize) -> usize {
        self.movement_to[m]
    }

    pub fn phase_movements(&self, phase: usize) -> &[usize] {
        &self.phase_movements[phase]
    }

    pub fn movement_in_phase(&self, m: usize, phase: usize) -> bool {
        self.movement_phases[m].contains(&phase)
    }

    pub fn movements_conflict(&self, a: usize, b: usize) -> bool {
        self.conflicts[a][b]
    }

    pub fn max_incoming_length(&self) -> f64 {
        self.incoming
            .iter()
            .map(|&l| self.lanes[l].length)
            .fold(0.0, f64::max)
    }

    pub fn max_incoming_speed(&self) -> f64 {
        self.incoming
            .iter()
            .map(|&l| self.lanes[l].speed_limit)
            .fold(0.0, f64::max)
    }
}

/// All conflicting movement pairs, each reported once as `(a, b)` with `a < b`.
pub fn conflict_table(spec: &NetworkSpec) -> BTreeSet<(String, String)> {
    let n = spec.movements.len();
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in a + 1..n {
            if spec.conflicts[a][b] {
                let (x, y) = (&spec.movements[a].id, &spec.movements[b].id);
                if x <= y {
                    out.insert((x.clone(), y.clone()));
                } else {
                    out.insert((y.clone(), x.clone()));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = include_str!("../../scenarios/minimal.toml");

    #[test]
    fn minimal_fixture_loads() {
        let spec = load_network(MINIMAL).unwrap();
        assert_eq!(spec.approaches().len(), 2);
        assert_eq!(spec.movements().len(), 2);
        assert_eq!(spec.phase_count(), 2);
        assert_eq!(spec.incoming_lanes().len(), 2);
    }

    #[test]
    fn dangling_lane_reference() {
        let text = MINIMAL.replace("to = \"E_out_0\"", "to = \"X9\"");
        match load_network(&text) {
            Err(Error::DanglingReference(msg)) => assert!(msg.contains("X9")),
            other => panic!("expected DanglingReference, got {other:?}"),
        }
    }

    #[test]
    fn conflicting_phase_rejected() {
        let text = MINIMAL.replace(
            "[[phases]]\nmovements = [\"N_L\"]",
            "[[phases]]\nmovements = [\"N_L\", \"E_R\"]",
        );
        assert!(matches!(
            load_network(&text),
            Err(Error::ConflictingPhase { .. })
        ));
    }

    #[test]
    fn empty_phase_rejected() {
        let text = MINIMAL.replace(
            "[[phases]]\nmovements = [\"N_L\"]",
            "[[phases]]\nmovements = [\"N_L\"]\n\n[[phases]]\nmovements = []",
        );
        assert!(matches!(load_network(&text), Err(Error::EmptyPhase(1))));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(load_network("lanes = ["), Err(Error::Parse(_))));
    }

    #[test]
    fn capacity_floor() {
        assert_eq!(lane_capacity(150.0, 5.0, 2.5), 20);
        assert_eq!(lane_capacity(7.4, 5.0, 2.5), 0);
    }
}
