//! The control environment: manager lifecycle, the delta-time action loop,
//! and the diff-waiting reward.
//!
//! Every step runs `before_step` on all managers in registration order, then
//! `delta_time / dt` physics sub-steps (each calling `step` on all managers),
//! then `after_step` on all managers. The built-in registry is map, traffic,
//! signal, metrics.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::World;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecorder, MetricsReport};
use crate::network::NetworkSpec;
use crate::observe::{
    bev_raster, default_extent, feature_len, feature_obs, multi_view_raster, noisy_feature_obs, FeatureObs,
    RasterObs,
};
use crate::scenario::{ObsKind, ScenarioConfig};
use crate::signal::{request_phase, tick, SignalState};

const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Features(FeatureObs),
    Raster(RasterObs),
    MultiView(Vec<RasterObs>),
}

impl Observation {
    pub fn features(&self) -> Option<&FeatureObs> {
        match self {
            Observation::Features(f) => Some(f),
            _ => None,
        }
    }

    /// Flattened values, views concatenated in approach order.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            Observation::Features(f) => f.to_vec(),
            Observation::Raster(r) => r.pixels.iter().map(|&p| p as f64).collect(),
            Observation::MultiView(v) => v.iter().flat_map(|r| r.pixels.iter().map(|&p| p as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSpec {
    /// Vector in `[0, 1]^len`.
    Vector { len: usize },
    /// `shape` box in `[0, 1]`.
    Box { shape: [usize; 3] },
    /// `count` boxes of `shape`.
    Views { count: usize, shape: [usize; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpec {
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    pub queue: usize,
    pub completed: usize,
    pub in_network: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub sim_time_ms: u64,
    pub current_phase: usize,
    /// Windowed waiting over incoming lanes, s.
    pub total_waiting: f64,
    pub step_metrics: StepMetrics,
}

impl StepInfo {
    pub fn sim_time_s(&self) -> f64 {
        self.sim_time_ms as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// `W_prev - W_now`: positive when waiting went down.
pub fn reward_diff_waiting(w_prev: f64, w_now: f64) -> f64 {
    w_prev - w_now
}

/// Mutable state shared by all managers.
#[derive(Debug)]
pub struct SimState {
    pub config: ScenarioConfig,
    pub world: World,
    pub signal: SignalState,
    pub traffic_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub metrics: MetricsRecorder,
    /// Phase requested for the step in progress.
    pub action: Option<usize>,
    /// Windowed waiting at the end of the previous step, ms.
    pub waiting_prev_ms: u64,
    pub waiting_initial_ms: u64,
    pub reward: f64,
    pub step_metrics: StepMetrics,
    signal_trace: Option<Vec<(u64, SignalState)>>,
}

impl SimState {
    /// Records the signal the physics just used for the sub-step ending now.
    fn record_signal(&mut self) {
        let t = self.world.time_ms().saturating_sub(self.world.dt_ms());
        if let Some(trace) = &mut self.signal_trace {
            trace.push((t, self.signal));
        }
    }
}

/// Lifecycle hooks. `step` runs once per physics sub-step.
pub trait Manager: Send {
    fn name(&self) -> &str;
    fn before_reset(&mut self, _sim: &mut SimState) -> Result<()> {
        Ok(())
    }
    fn reset(&mut self, _sim: &mut SimState) -> Result<()> {
        Ok(())
    }
    fn before_step(&mut self, _sim: &mut SimState) -> Result<()> {
        Ok(())
    }
    fn step(&mut self, _sim: &mut SimState) -> Result<()> {
        Ok(())
    }
    fn after_step(&mut self, _sim: &mut SimState) -> Result<()> {
        Ok(())
    }
}

/// Static network; nothing to do beyond owning its slot in the order.
struct MapManager;

impl Manager for MapManager {
    fn name(&self) -> &str {
        "map"
    }
}

/// Spawns and moves vehicles.
struct TrafficManager;

impl Manager for TrafficManager {
    fn name(&self) -> &str {
        "traffic"
    }

    fn before_reset(&mut self, sim: &mut SimState) -> Result<()> {
        sim.world.clear();
        Ok(())
    }

    fn reset(&mut self, sim: &mut SimState) -> Result<()> {
        sim.traffic_rng = ChaCha8Rng::seed_from_u64(sim.config.seed);
        sim.noise_rng = noise_rng(sim.config.seed);
        Ok(())
    }

    fn step(&mut self, sim: &mut SimState) -> Result<()> {
        sim.world.spawn_step(&mut sim.traffic_rng)?;
        sim.world.advance(&sim.signal, &mut sim.traffic_rng);
        Ok(())
    }
}

/// Applies actions and runs the signal clock.
struct SignalManager;

impl Manager for SignalManager {
    fn name(&self) -> &str {
        "signal"
    }

    fn reset(&mut self, sim: &mut SimState) -> Result<()> {
        sim.signal = SignalState::new(0);
        Ok(())
    }

    fn before_step(&mut self, sim: &mut SimState) -> Result<()> {
        if let Some(a) = sim.action {
            sim.signal = request_phase(sim.signal, a, &sim.config.timing, sim.world.spec().phase_count())?;
        }
        Ok(())
    }

    fn step(&mut self, sim: &mut SimState) -> Result<()> {
        sim.record_signal();
        tick(&mut sim.signal, sim.config.dt_ms);
        Ok(())
    }
}

/// Metric samples and the reward.
struct MetricsManager;

impl Manager for MetricsManager {
    fn name(&self) -> &str {
        "metrics"
    }

    fn before_reset(&mut self, sim: &mut SimState) -> Result<()> {
        sim.metrics.clear();
        Ok(())
    }

    fn reset(&mut self, sim: &mut SimState) -> Result<()> {
        let w0 = sim.world.windowed_waiting_ms();
        sim.waiting_prev_ms = w0;
        sim.waiting_initial_ms = w0;
        sim.reward = 0.0;
        sim.step_metrics = StepMetrics::default();
        Ok(())
    }

    fn before_step(&mut self, sim: &mut SimState) -> Result<()> {
        sim.step_metrics = StepMetrics::default();
        Ok(())
    }

    fn step(&mut self, sim: &mut SimState) -> Result<()> {
        sim.metrics.record_step(&sim.world);
        sim.step_metrics.completed += sim.world.completed_last_step().len();
        Ok(())
    }

    fn after_step(&mut self, sim: &mut SimState) -> Result<()> {
        let now = sim.world.windowed_waiting_ms();
        let diff = sim.waiting_prev_ms as i64 - now as i64;
        sim.reward = diff as f64 / 1000.0;
        sim.waiting_prev_ms = now;
        sim.step_metrics.queue = sim.world.total_incoming_queue();
        sim.step_metrics.in_network = sim.world.vehicle_count();
        Ok(())
    }
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    rng
}

pub struct Env {
    sim: SimState,
    managers: Vec<Box<dyn Manager>>,
    steps_done: u64,
    ready: bool,
}

impl Env {
    /// Builds the environment and runs the reset lifecycle once.
    pub fn new(spec: Arc<NetworkSpec>, config: ScenarioConfig) -> Result<Env> {
        config.validate()?;
        let world = World::new(spec, config.dynamics.clone(), &config.flows, config.dt_ms, config.window_ms)?;
        let sim = SimState {
            world,
            signal: SignalState::new(0),
            traffic_rng: ChaCha8Rng::seed_from_u64(config.seed),
            noise_rng: noise_rng(config.seed),
            metrics: MetricsRecorder::new(config.emission),
            action: None,
            waiting_prev_ms: 0,
            waiting_initial_ms: 0,
            reward: 0.0,
            step_metrics: StepMetrics::default(),
            signal_trace: None,
            config,
        };
        let mut env = Env {
            sim,
            managers: vec![
                Box::new(MapManager),
                Box::new(TrafficManager),
                Box::new(SignalManager),
                Box::new(MetricsManager),
            ],
            steps_done: 0,
            ready: false,
        };
        env.reset_lifecycle()?;
        Ok(env)
    }

    /// Appends a manager after the built-in ones.
    pub fn register_manager(&mut self, manager: Box<dyn Manager>) {
        self.managers.push(manager);
    }

    pub fn manager_names(&self) -> Vec<String> {
        self.managers.iter().map(|m| m.name().to_string()).collect()
    }

    /// From the next reset on, records `(start ms, signal)` for every
    /// sub-step, with the signal as the vehicles saw it.
    pub fn enable_signal_trace(&mut self) {
        self.sim.signal_trace = Some(Vec::new());
    }

    pub fn signal_trace(&self) -> &[(u64, SignalState)] {
        self.sim.signal_trace.as_deref().unwrap_or(&[])
    }

    fn reset_lifecycle(&mut self) -> Result<()> {
        if let Some(trace) = &mut self.sim.signal_trace {
            trace.clear();
        }
        self.sim.action = None;
        for m in &mut self.managers {
            m.before_reset(&mut self.sim)?;
        }
        for m in &mut self.managers {
            m.reset(&mut self.sim)?;
        }
        self.steps_done = 0;
        self.ready = true;
        Ok(())
    }

    /// Resets with a new configuration. The network stays the same.
    pub fn reset(&mut self, config: ScenarioConfig) -> Result<Observation> {
        config.validate()?;
        if config.flows != self.sim.config.flows
            || config.dynamics != self.sim.config.dynamics
            || config.dt_ms != self.sim.config.dt_ms
            || config.window_ms != self.sim.config.window_ms
        {
            self.sim.world = World::new(
                self.sim.world.spec_arc().clone(),
                config.dynamics.clone(),
                &config.flows,
                config.dt_ms,
                config.window_ms,
            )?;
        }
        if config.emission != *self.sim.metrics.coeffs() {
            self.sim.metrics = MetricsRecorder::new(config.emission);
        }
        self.sim.config = config;
        self.reset_lifecycle()?;
        self.observe()
    }

    pub fn reset_seed(&mut self, seed: u64) -> Result<Observation> {
        let config = self.sim.config.with_seed(seed);
        self.reset(config)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if !self.ready {
            return Err(Error::NotReset);
        }
        if self.is_truncated() {
            return Err(Error::EpisodeOver);
        }
        if action >= self.spec().phase_count() {
            return Err(Error::InvalidAction(action));
        }
        self.sim.action = Some(action);
        for m in &mut self.managers {
            m.before_step(&mut self.sim)?;
        }
        let sub_steps = self.sim.config.timing.delta_time_ms / self.sim.config.dt_ms;
        for _ in 0..sub_steps {
            for m in &mut self.managers {
                m.step(&mut self.sim)?;
            }
        }
        for m in &mut self.managers {
            m.after_step(&mut self.sim)?;
        }
        self.sim.action = None;
        self.steps_done += 1;

        let observation = self.observe()?;
        Ok(StepResult {
            observation,
            reward: self.sim.reward,
            terminated: false,
            truncated: self.is_truncated(),
            info: StepInfo {
                sim_time_ms: self.sim.world.time_ms(),
                current_phase: self.sim.signal.current_phase,
                total_waiting: self.sim.waiting_prev_ms as f64 / 1000.0,
                step_metrics: self.sim.step_metrics,
            },
        })
    }

    pub fn is_truncated(&self) -> bool {
        self.sim.world.time_ms() >= self.sim.config.duration_ms
    }

    pub fn observe(&mut self) -> Result<Observation> {
        let sim = &mut self.sim;
        let extent = sim.config.raster_extent.unwrap_or_else(|| default_extent(sim.world.spec()));
        Ok(match sim.config.obs_kind {
            ObsKind::Feature => Observation::Features(feature_obs(&sim.world, &sim.signal, &sim.config.timing)),
            ObsKind::NoisyFeature => Observation::Features(noisy_feature_obs(
                &sim.world,
                &sim.signal,
                &sim.config.timing,
                &sim.config.noise,
                &mut sim.noise_rng,
            )),
            ObsKind::Bev => {
                Observation::Raster(bev_raster(&sim.world, &sim.signal, sim.config.raster_resolution, extent)?)
            }
            ObsKind::MultiView => Observation::MultiView(multi_view_raster(
                &sim.world,
                &sim.signal,
                sim.config.raster_resolution,
                extent,
            )?),
        })
    }

    pub fn observation_spec(&self) -> ObservationSpec {
        let spec = self.spec();
        let r = self.sim.config.raster_resolution;
        match self.sim.config.obs_kind {
            ObsKind::Feature | ObsKind::NoisyFeature => {
                ObservationSpec::Vector { len: feature_len(spec.phase_count(), spec.incoming_lanes().len()) }
            }
            ObsKind::Bev => ObservationSpec::Box { shape: [r, r, 3] },
            ObsKind::MultiView => ObservationSpec::Views { count: spec.approaches().len(), shape: [r, r, 3] },
        }
    }

    pub fn action_spec(&self) -> ActionSpec {
        ActionSpec { n: self.spec().phase_count() }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.sim.world.spec()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.sim.config
    }

    pub fn world(&self) -> &World {
        &self.sim.world
    }

    pub fn signal(&self) -> &SignalState {
        &self.sim.signal
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn waiting_ms(&self) -> u64 {
        self.sim.waiting_prev_ms
    }

    pub fn initial_waiting_ms(&self) -> u64 {
        self.sim.waiting_initial_ms
    }

    pub fn metrics(&self) -> &MetricsRecorder {
        &self.sim.metrics
    }

    pub fn finalize(&self) -> Result<MetricsReport> {
        self.sim.metrics.finalize(&self.sim.world, self.sim.config.duration_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_scenario;
    use std::sync::Mutex;

    fn env(obs: ObsKind) -> Env {
        let s = builtin_scenario("single-intersection").unwrap();
        Env::new(s.network, s.config.with_obs(obs)).unwrap()
    }

    #[test]
    fn reward_difference() {
        assert_eq!(reward_diff_waiting(100.0, 80.0), 20.0);
        assert_eq!(reward_diff_waiting(42.0, 42.0), 0.0);
    }

    #[test]
    fn same_seed_same_initial_observation() {
        let mut a = env(ObsKind::NoisyFeature);
        let mut b = env(ObsKind::NoisyFeature);
        assert_eq!(a.reset_seed(3).unwrap(), b.reset_seed(3).unwrap());
    }

    #[test]
    fn step_advances_delta_time() {
        let mut e = env(ObsKind::Feature);
        for k in 1..=4u64 {
            let r = e.step(0).unwrap();
            assert_eq!(r.info.sim_time_ms, k * 5000);
            assert!(!r.terminated);
        }
    }

    #[test]
    fn full_episode_is_720_steps() {
        let mut e = env(ObsKind::Feature);
        let mut n = 0;
        loop {
            let r = e.step(0).unwrap();
            n += 1;
            assert_eq!(r.truncated, n == 720);
            if r.truncated {
                break;
            }
        }
        assert_eq!(e.step(0).unwrap_err(), Error::EpisodeOver);
        e.reset_seed(0).unwrap();
        let c = e.world().counters();
        assert_eq!((c.spawned, c.done, c.in_network, c.pending), (0, 0, 0, 0));
        assert_eq!(e.steps_done(), 0);
    }

    #[test]
    fn empty_network_reward_zero() {
        let s = builtin_scenario("single-intersection").unwrap();
        let cfg = ScenarioConfig { flows: Vec::new(), ..s.config.clone() };
        let mut e = Env::new(s.network, cfg).unwrap();
        for _ in 0..10 {
            assert_eq!(e.step(0).unwrap().reward, 0.0);
        }
    }

    #[test]
    fn bev_reset_is_empty() {
        let mut e = env(ObsKind::Bev);
        let obs = e.reset_seed(1).unwrap();
        match obs {
            Observation::Raster(r) => assert_eq!(r.channel_mass(1), 0.0),
            other => panic!("unexpected observation {other:?}"),
        }
    }

    #[test]
    fn invalid_action() {
        let mut e = env(ObsKind::Feature);
        assert_eq!(e.step(4).unwrap_err(), Error::InvalidAction(4));
    }

    #[test]
    fn specs() {
        let e = env(ObsKind::Feature);
        assert_eq!(e.observation_spec(), ObservationSpec::Vector { len: 21 });
        assert_eq!(e.action_spec(), ActionSpec { n: 4 });
        let e = env(ObsKind::MultiView);
        assert_eq!(e.observation_spec(), ObservationSpec::Views { count: 4, shape: [64, 64, 3] });
    }

    struct Spy {
        tag: &'static str,
        log: Arc<Mutex<Vec<String>>>,
    }

    impl Manager for Spy {
        fn name(&self) -> &str {
            self.tag
        }
        fn before_reset(&mut self, _: &mut SimState) -> Result<()> {
            self.log.lock().unwrap().push(format!("{}:before_reset", self.tag));
            Ok(())
        }
        fn reset(&mut self, _: &mut SimState) -> Result<()> {
            self.log.lock().unwrap().push(format!("{}:reset", self.tag));
            Ok(())
        }
        fn before_step(&mut self, _: &mut SimState) -> Result<()> {
            self.log.lock().unwrap().push(format!("{}:before_step", self.tag));
            Ok(())
        }
        fn step(&mut self, _: &mut SimState) -> Result<()> {
            self.log.lock().unwrap().push(format!("{}:step", self.tag));
            Ok(())
        }
        fn after_step(&mut self, _: &mut SimState) -> Result<()> {
            self.log.lock().unwrap().push(format!("{}:after_step", self.tag));
            Ok(())
        }
    }

    #[test]
    fn hook_order() {
        let log = Arc::new(Mutex::new(Vec::new()));
        let mut e = env(ObsKind::Feature);
        e.register_manager(Box::new(Spy { tag: "a", log: log.clone() }));
        e.register_manager(Box::new(Spy { tag: "b", log: log.clone() }));
        assert_eq!(e.manager_names(), ["map", "traffic", "signal", "metrics", "a", "b"]);
        e.reset_seed(0).unwrap();
        e.step(1).unwrap();
        let mut expected: Vec<String> =
            ["a:before_reset", "b:before_reset", "a:reset", "b:reset", "a:before_step", "b:before_step"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        for _ in 0..5 {
            expected.push("a:step".into());
            expected.push("b:step".into());
        }
        expected.push("a:after_step".into());
        expected.push("b:after_step".into());
        assert_eq!(*log.lock().unwrap(), expected);
    }

    #[test]
    fn env_is_send() {
        fn assert_send<T: Send>() {}
        assert_send::<Env>();
    }
}
