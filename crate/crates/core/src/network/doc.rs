//! TOML scenario documents.
//!
//! ```toml
//! junction_extent = 20.0
//! conflicts = [["A", "B"]]          # optional explicit pairs
//!
//! [[approaches]]                    # optional; ids N/E/S/W imply their heading
//! id = "N"
//! heading = "N"                     # or a bearing in degrees
//!
//! [[lanes]]
//! id = "N_in_0"
//! approach = "N"
//! kind = "incoming"
//! length = 150.0
//! speed_limit = 13.89
//!
//! [[movements]]
//! id = "N_T"
//! from = "N_in_0"
//! to = "S_out_0"
//! turn = "through"
//!
//! [[phases]]
//! movements = ["N_T", "S_T"]
//!
//! [flows]                           # vehicles per hour, keyed by movement
//! N_T = 600.0
//!
//! [sim]
//! duration_s = 3600
//! dt_s = 1.0
//! delta_time_s = 5
//! min_green_s = 10
//! yellow_s = 2
//! seed = 0
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    lane_capacity, Approach, Heading, Lane, Movement, NetworkSpec, Phase, Turn,
    DEFAULT_JUNCTION_EXTENT, DEFAULT_LANE_WIDTH,
};
use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::observe::NoiseParams;
use crate::signal::SotlParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeadingDoc {
    Name(String),
    Degrees(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproachDoc {
    pub id: String,
    pub heading: HeadingDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneKindDoc {
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDoc {
    pub id: String,
    pub approach: String,
    pub kind: LaneKindDoc,
    pub length: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub turn: Turn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDoc {
    pub movements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDoc {
    pub duration_s: f64,
    pub dt_s: f64,
    pub delta_time_s: f64,
    pub min_green_s: f64,
    pub yellow_s: f64,
    pub seed: u64,
    pub gamma: f64,
    pub waiting_window_s: f64,
}

impl Default for SimDoc {
    fn default() -> Self {
        SimDoc {
            duration_s: 3600.0,
            dt_s: 1.0,
            delta_time_s: 5.0,
            min_green_s: 10.0,
            yellow_s: 2.0,
            seed: 0,
            gamma: 0.99,
            waiting_window_s: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDoc {
    /// `[phase, green seconds]` slots in cycle order.
    pub plan: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterDoc {
    pub resolution: usize,
    pub extent: Option<f64>,
}

impl Default for RasterDoc {
    fn default() -> Self {
        RasterDoc { resolution: 64, extent: None }
    }
}

/// Whole-scenario document: network, demand, and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub junction_extent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub approaches: Vec<ApproachDoc>,
    pub lanes: Vec<LaneDoc>,
    pub movements: Vec<MovementDoc>,
    pub phases: Vec<PhaseDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flows: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sotl: Option<SotlParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<RasterDoc>,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<ScenarioDoc> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Builds and validates the network part of the document.
    pub fn network(&self) -> Result<NetworkSpec> {
        let dynamics = self.dynamics.clone().unwrap_or_default();

        let mut approach_order: Vec<String> = self.approaches.iter().map(|a| a.id.clone()).collect();
        for lane in &self.lanes {
            if !approach_order.contains(&lane.approach) {
                approach_order.push(lane.approach.clone());
            }
        }

        let mut approaches = Vec::with_capacity(approach_order.len());
        for id in &approach_order {
            let heading = match self.approaches.iter().find(|a| &a.id == id) {
                Some(a) => match &a.heading {
                    HeadingDoc::Name(n) => Heading::from_token(n).ok_or_else(|| {
                        Error::Parse(format!("approach `{id}`: unknown heading `{n}`"))
                    })?,
                    HeadingDoc::Degrees(d) => Heading::Degrees(*d),
                },
                None => Heading::from_token(id).ok_or_else(|| {
                    Error::Parse(format!(
                        "approach `{id}` needs an explicit heading in [[approaches]]"
                    ))
                })?,
            };
            let mut approach = Approach {
                id: id.clone(),
                heading,
                incoming_lanes: Vec::new(),
                outgoing_lanes: Vec::new(),
            };
            for lane in self.lanes.iter().filter(|l| &l.approach == id) {
                let built = Lane {
                    id: lane.id.clone(),
                    length: lane.length,
                    speed_limit: lane.speed_limit,
                    capacity_vehicles: lane_capacity(
                        lane.length,
                        dynamics.vehicle_length,
                        dynamics.min_gap,
                    ),
                };
                match lane.kind {
                    LaneKindDoc::Incoming => approach.incoming_lanes.push(built),
                    LaneKindDoc::Outgoing => approach.outgoing_lanes.push(built),
                }
            }
            approaches.push(approach);
        }

        let movements = self
            .movements
            .iter()
            .map(|m| Movement {
                id: m.id.clone(),
                from_lane: m.from.clone(),
                to_lane: m.to.clone(),
                turn: m.turn,
            })
            .collect();
        let phases = self
            .phases
            .iter()
            .enumerate()
            .map(|(index, p)| Phase { index, movements: p.movements.clone() })
            .collect();

        NetworkSpec::new(
            approaches,
            movements,
            phases,
            self.junction_extent.unwrap_or(DEFAULT_JUNCTION_EXTENT),
            self.lane_width.unwrap_or(DEFAULT_LANE_WIDTH),
            self.conflicts.clone(),
        )
    }

    /// Document holding only the network sections of `spec`.
    pub fn from_network(spec: &NetworkSpec) -> ScenarioDoc {
        let approaches = spec
            .approaches()
            .iter()
            .map(|a| ApproachDoc {
                id: a.id.clone(),
                heading: match a.heading {
                    Heading::N => HeadingDoc::Name("N".into()),
                    Heading::E => HeadingDoc::Name("E".into()),
                    Heading::S => HeadingDoc::Name("S".into()),
                    Heading::W => HeadingDoc::Name("W".into()),
                    Heading::Degrees(d) => HeadingDoc::Degrees(d),
                },
            })
            .collect();
        let mut lanes = Vec::new();
        for a in spec.approaches() {
            for (kind, group) in [
                (LaneKindDoc::Incoming, &a.incoming_lanes),
                (LaneKindDoc::Outgoing, &a.outgoing_lanes),
            ] {
                for l in group {
                    lanes.push(LaneDoc {
                        id: l.id.clone(),
                        approach: a.id.clone(),
                        kind,
                        length: l.length,
                        speed_limit: l.speed_limit,
                    });
                }
            }
        }
        ScenarioDoc {
            name: None,
            junction_extent: Some(spec.junction_extent()),
            lane_width: Some(spec.lane_width()),
            controller: None,
            conflicts: spec.declared_conflicts().to_vec(),
            approaches,
            lanes,
            movements: spec
                .movements()
                .iter()
                .map(|m| MovementDoc {
                    id: m.id.clone(),
                    from: m.from_lane.clone(),
                    to: m.to_lane.clone(),
                    turn: m.turn,
                })
                .collect(),
            phases: spec
                .green_phases()
                .iter()
                .map(|p| PhaseDoc { movements: p.movements.clone() })
                .collect(),
            flows: BTreeMap::new(),
            sim: None,
            dynamics: None,
            sotl: None,
            fixed: None,
            noise: None,
            raster: None,
        }
    }
}

/// Parses a scenario document and returns its validated network.
pub fn load_network(text: &str) -> Result<NetworkSpec> {
    ScenarioDoc::parse(text)?.network()
}

/// Writes the network sections of `spec` as a scenario document.
pub fn serialize_network(spec: &NetworkSpec) -> Result<String> {
    ScenarioDoc::from_network(spec).to_text()
}
