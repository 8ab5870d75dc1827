//! Scenario loading: network plus run configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::dynamics::{DynamicsParams, FlowSpec};
use crate::error::{Error, Result};
use crate::metrics::EmissionCoeffs;
use crate::network::{NetworkSpec, ScenarioDoc};
use crate::observe::NoiseParams;
use crate::signal::{default_fixed_plan, SignalTiming, SotlParams};

const SINGLE_INTERSECTION: &str = include_str!("../scenarios/single-intersection.toml");
const ASYM_INTERSECTION: &str = include_str!("../scenarios/asym-intersection.toml");

pub const BUILTIN_SCENARIOS: [&str; 2] = ["single-intersection", "asym-intersection"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObsKind {
    Feature,
    NoisyFeature,
    Bev,
    MultiView,
}

impl ObsKind {
    pub const ALL: [ObsKind; 4] = [ObsKind::Feature, ObsKind::NoisyFeature, ObsKind::Bev, ObsKind::MultiView];

    pub fn token(self) -> &'static str {
        match self {
            ObsKind::Feature => "feature",
            ObsKind::NoisyFeature => "noisy_feature",
            ObsKind::Bev => "bev",
            ObsKind::MultiView => "multiview",
        }
    }

    pub fn is_feature(self) -> bool {
        matches!(self, ObsKind::Feature | ObsKind::NoisyFeature)
    }
}

impl fmt::Display for ObsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ObsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ObsKind> {
        ObsKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown observation kind `{s}`")))
    }
}

/// Everything an environment needs besides the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration_ms: u64,
    pub dt_ms: u64,
    pub timing: SignalTiming,
    pub flows: Vec<FlowSpec>,
    pub seed: u64,
    pub obs_kind: ObsKind,
    pub gamma: f64,
    pub dynamics: DynamicsParams,
    pub noise: NoiseParams,
    pub raster_resolution: usize,
    /// `None` means [`crate::observe::default_extent`].
    pub raster_extent: Option<f64>,
    pub window_ms: u64,
    pub emission: EmissionCoeffs,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            duration_ms: 3_600_000,
            dt_ms: 1000,
            timing: SignalTiming::default(),
            flows: Vec::new(),
            seed: 0,
            obs_kind: ObsKind::Feature,
            gamma: 0.99,
            dynamics: DynamicsParams::default(),
            noise: NoiseParams::default(),
            raster_resolution: 64,
            raster_extent: None,
            window_ms: 1_000_000,
            emission: EmissionCoeffs::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate(self.dt_ms)?;
        self.dynamics.validate()?;
        if self.duration_ms == 0 || !self.duration_ms.is_multiple_of(self.timing.delta_time_ms) {
            return Err(Error::Config("duration must be a positive multiple of delta_time".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if !(self.noise.std_factor >= 0.0) || !self.noise.mean_factor.is_finite() {
            return Err(Error::Config("noise std must be non-negative and mean finite".into()));
        }
        if self.raster_resolution < 8 {
            return Err(Error::BadResolution(self.raster_resolution));
        }
        if let Some(e) = self.raster_extent {
            if !(e > 0.0) {
                return Err(Error::Config("raster extent must be positive".into()));
            }
        }
        if self.window_ms == 0 {
            return Err(Error::Config("waiting window must be positive".into()));
        }
        Ok(())
    }

    /// Number of agent steps in one episode.
    pub fn steps_per_episode(&self) -> u64 {
        self.duration_ms / self.timing.delta_time_ms
    }

    pub fn with_seed(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig { seed, ..self.clone() }
    }

    pub fn with_obs(&self, obs_kind: ObsKind) -> ScenarioConfig {
        ScenarioConfig { obs_kind, ..self.clone() }
    }
}

/// Controller settings carried by a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub default_controller: Option<String>,
    pub sotl: SotlParams,
    /// `(phase, green ms)` slots.
    pub fixed_plan: Vec<(usize, u64)>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network: Arc<NetworkSpec>,
    pub config: ScenarioConfig,
    pub controllers: ControllerSettings,
}

fn seconds_to_ms(what: &str, s: f64) -> Result<u64> {
    let ms = s * 1000.0;
    if !(ms >= 0.0) || !ms.is_finite() || (ms - ms.round()).abs() > 1e-6 {
        return Err(Error::Config(format!("{what} = {s} s is not a whole number of milliseconds")));
    }
    Ok(ms.round() as u64)
}

impl Scenario {
    pub fn from_doc(doc: &ScenarioDoc, fallback_name: &str) -> Result<Scenario> {
        let network = Arc::new(doc.network()?);
        let sim = doc.sim.clone().unwrap_or_default();
        let timing = SignalTiming {
            min_green_ms: seconds_to_ms("sim.min_green_s", sim.min_green_s)?,
            yellow_ms: seconds_to_ms("sim.yellow_s", sim.yellow_s)?,
            delta_time_ms: seconds_to_ms("sim.delta_time_s", sim.delta_time_s)?,
        };
        let mut flows = Vec::with_capacity(doc.flows.len());
        for (movement, &rate) in &doc.flows {
            if network.movement_index(movement).is_none() {
                return Err(Error::DanglingReference(format!("flow for unknown movement `{movement}`")));
            }
            flows.push(FlowSpec { movement: movement.clone(), rate });
        }
        // Flows follow movement declaration order so spawn draws do not depend on map ordering.
        flows.sort_by_key(|f| network.movement_index(&f.movement));
        let raster = doc.raster.clone().unwrap_or_default();
        let config = ScenarioConfig {
            duration_ms: seconds_to_ms("sim.duration_s", sim.duration_s)?,
            dt_ms: seconds_to_ms("sim.dt_s", sim.dt_s)?,
            timing,
            flows,
            seed: sim.seed,
            obs_kind: ObsKind::Feature,
            gamma: sim.gamma,
            dynamics: doc.dynamics.clone().unwrap_or_default(),
            noise: doc.noise.clone().unwrap_or_default(),
            raster_resolution: raster.resolution,
            raster_extent: raster.extent,
            window_ms: seconds_to_ms("sim.waiting_window_s", sim.waiting_window_s)?,
            emission: EmissionCoeffs::default(),
        };
        config.validate()?;

        let sotl = doc.sotl.clone().unwrap_or_default();
        sotl.validate(&network)?;
        let fixed_plan = match &doc.fixed {
            Some(f) => {
                let mut plan = Vec::with_capacity(f.plan.len());
                for &(phase, secs) in &f.plan {
                    if phase >= network.phase_count() {
                        return Err(Error::InvalidPhase(phase));
                    }
                    plan.push((phase, seconds_to_ms("fixed.plan", secs)?));
                }
                if plan.is_empty() {
                    return Err(Error::Config("fixed.plan must not be empty".into()));
                }
                plan
            }
            None => default_fixed_plan(network.phase_count()),
        };

        Ok(Scenario {
            name: doc.name.clone().unwrap_or_else(|| fallback_name.to_string()),
            network,
            config,
            controllers: ControllerSettings {
                default_controller: doc.controller.clone(),
                sotl,
                fixed_plan,
            },
        })
    }
}

pub fn load_scenario(text: &str) -> Result<Scenario> {
    Scenario::from_doc(&ScenarioDoc::parse(text)?, "custom")
}

pub fn builtin_scenario(name: &str) -> Result<Scenario> {
    let text = match name {
        "single-intersection" => SINGLE_INTERSECTION,
        "asym-intersection" => ASYM_INTERSECTION,
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    Scenario::from_doc(&ScenarioDoc::parse(text)?, name)
}

/// A built-in name, or else a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario> {
    if BUILTIN_SCENARIOS.contains(&name_or_path) {
        return builtin_scenario(name_or_path);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read scenario `{name_or_path}`: {e}")))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
    Scenario::from_doc(&ScenarioDoc::parse(&text)?, stem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_intersection_shape() {
        let s = builtin_scenario("single-intersection").unwrap();
        assert_eq!(s.network.approaches().len(), 4);
        assert_eq!(s.network.phase_count(), 4);
        assert_eq!(s.network.movements().len(), 8);
        assert_eq!(s.network.incoming_lanes().len(), 8);
        assert_eq!(s.config.steps_per_episode(), 720);
        let rates: Vec<f64> = s.config.flows.iter().map(|f| f.rate).collect();
        let through: Vec<f64> = s
            .config
            .flows
            .iter()
            .filter(|f| f.movement.ends_with("_T"))
            .map(|f| f.rate)
            .collect();
        assert_eq!(rates.len(), 8);
        assert!(through.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn asym_intersection_rates_differ() {
        let s = builtin_scenario("asym-intersection").unwrap();
        assert_eq!(s.network.phase_count(), 4);
        let per_approach: Vec<f64> = ["N", "E", "S", "W"]
            .iter()
            .map(|a| {
                s.config
                    .flows
                    .iter()
                    .filter(|f| f.movement.starts_with(a))
                    .map(|f| f.rate)
                    .sum()
            })
            .collect();
        assert!(per_approach.iter().any(|&r| r != per_approach[0]));
    }

    #[test]
    fn every_movement_served() {
        for name in BUILTIN_SCENARIOS {
            let s = builtin_scenario(name).unwrap();
            for m in 0..s.network.movements().len() {
                assert!((0..s.network.phase_count()).any(|p| s.network.movement_in_phase(m, p)));
            }
        }
    }

    #[test]
    fn unknown_builtin() {
        assert_eq!(builtin_scenario("roundabout").unwrap_err(), Error::UnknownScenario("roundabout".into()));
    }

    #[test]
    fn missing_file_is_parse_error() {
        assert!(matches!(resolve_scenario("/nonexistent/x.toml"), Err(Error::Parse(_))));
    }

    #[test]
    fn obs_kind_tokens_round_trip() {
        for k in ObsKind::ALL {
            assert_eq!(k.token().parse::<ObsKind>().unwrap(), k);
        }
        assert!("rgb".parse::<ObsKind>().is_err());
    }

    #[test]
    fn fractional_duration_rejected() {
        let text = SINGLE_INTERSECTION.replace("duration_s = 3600", "duration_s = 3601");
        assert!(matches!(load_scenario(&text), Err(Error::Config(_))));
    }
}
