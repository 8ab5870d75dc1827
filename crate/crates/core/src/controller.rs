//! Controllers that pick a phase request each agent step.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::World;
use crate::env::{Env, Observation};
use crate::error::{Error, Result};
use crate::learner::{discretize, QTable};
use crate::metrics::MetricsReport;
use crate::scenario::{Scenario, ScenarioConfig};
use crate::signal::{fixed_time_policy, max_pressure_policy, sotl_policy, SignalState, SignalTiming, SotlParams};

/// What a controller sees before choosing.
pub struct Context<'a> {
    pub observation: &'a Observation,
    pub world: &'a World,
    pub signal: &'a SignalState,
    pub timing: &'a SignalTiming,
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    /// Called once per episode with the episode seed.
    fn reset(&mut self, _seed: u64) {}
    fn act(&mut self, ctx: &Context<'_>) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Fixed,
    Sotl,
    MaxPressure,
    Random,
    Rl,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Fixed,
        ControllerKind::Sotl,
        ControllerKind::MaxPressure,
        ControllerKind::Random,
        ControllerKind::Rl,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ControllerKind::Fixed => "fixed",
            ControllerKind::Sotl => "sotl",
            ControllerKind::MaxPressure => "maxpressure",
            ControllerKind::Random => "random",
            ControllerKind::Rl => "rl",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ControllerKind> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}`")))
    }
}

/// Cycles through a fixed `(phase, ms)` plan.
#[derive(Debug, Clone)]
pub struct FixedTime {
    plan: Vec<(usize, u64)>,
}

impl FixedTime {
    pub fn new(plan: Vec<(usize, u64)>) -> FixedTime {
        FixedTime { plan }
    }
}

impl Controller for FixedTime {
    fn name(&self) -> &str {
        "fixed"
    }

    fn act(&mut self, ctx: &Context<'_>) -> Result<usize> {
        Ok(fixed_time_policy(ctx.world.time_ms(), &self.plan))
    }
}

#[derive(Debug, Clone)]
pub struct Sotl {
    params: SotlParams,
    kappa: f64,
}

impl Sotl {
    pub fn new(params: SotlParams) -> Sotl {
        Sotl { params, kappa: 0.0 }
    }
}

impl Controller for Sotl {
    fn name(&self) -> &str {
        "sotl"
    }

    fn reset(&mut self, _seed: u64) {
        self.kappa = 0.0;
    }

    fn act(&mut self, ctx: &Context<'_>) -> Result<usize> {
        let (switch, kappa) = sotl_policy(ctx.world, ctx.signal, &self.params, ctx.timing, self.kappa);
        self.kappa = kappa;
        let s = ctx.signal;
        Ok(if switch {
            (s.current_phase + 1) % ctx.world.spec().phase_count()
        } else {
            s.current_phase
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaxPressure;

impl Controller for MaxPressure {
    fn name(&self) -> &str {
        "maxpressure"
    }

    fn act(&mut self, ctx: &Context<'_>) -> Result<usize> {
        Ok(max_pressure_policy(ctx.world))
    }
}

/// Uniform random phase each step.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> RandomPolicy {
        RandomPolicy { rng: Self::rng_for(seed) }
    }

    fn rng_for(seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        rng
    }
}

impl Controller for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = Self::rng_for(seed);
    }

    fn act(&mut self, ctx: &Context<'_>) -> Result<usize> {
        Ok(self.rng.random_range(0..ctx.world.spec().phase_count()))
    }
}

/// Greedy policy read from a trained table.
#[derive(Debug, Clone)]
pub struct Greedy {
    table: QTable,
    bins: usize,
}

impl Greedy {
    pub fn new(table: QTable, bins: usize) -> Greedy {
        Greedy { table, bins }
    }
}

impl Controller for Greedy {
    fn name(&self) -> &str {
        "rl"
    }

    fn act(&mut self, ctx: &Context<'_>) -> Result<usize> {
        let f = ctx
            .observation
            .features()
            .ok_or_else(|| Error::UnsupportedObsKind("raster".into()))?;
        Ok(self.table.greedy_trusted(&discretize(f, self.bins)))
    }
}

/// Builds a controller of `kind` with the scenario's settings. `rl` needs a table.
pub fn make_controller(kind: ControllerKind, scenario: &Scenario, table: Option<&QTable>) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Fixed => Box::new(FixedTime::new(scenario.controllers.fixed_plan.clone())),
        ControllerKind::Sotl => Box::new(Sotl::new(scenario.controllers.sotl.clone())),
        ControllerKind::MaxPressure => Box::new(MaxPressure),
        ControllerKind::Random => Box::new(RandomPolicy::new(scenario.config.seed)),
        ControllerKind::Rl => {
            let table = table.ok_or_else(|| Error::Config("controller `rl` needs a trained Q-table".into()))?;
            Box::new(Greedy::new(table.clone(), table.bins()))
        }
    })
}

/// Outcome of one full episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub report: MetricsReport,
    /// Discounted return with the configured gamma.
    pub discounted_return: f64,
    pub reward_sum: f64,
    pub steps: u64,
    pub waiting_initial_ms: u64,
    pub waiting_final_ms: u64,
}

/// Runs `env` from a fresh reset to truncation under `controller`.
pub fn run_env_episode(env: &mut Env, controller: &mut dyn Controller) -> Result<EpisodeOutcome> {
    let seed = env.config().seed;
    let gamma = env.config().gamma;
    controller.reset(seed);
    let mut obs = env.reset(env.config().clone())?;
    let mut discounted = 0.0;
    let mut discount = 1.0;
    let mut reward_sum = 0.0;
    loop {
        let action = {
            let ctx = Context {
                observation: &obs,
                world: env.world(),
                signal: env.signal(),
                timing: &env.config().timing,
            };
            controller.act(&ctx)?
        };
        let r = env.step(action)?;
        discounted += discount * r.reward;
        discount *= gamma;
        reward_sum += r.reward;
        obs = r.observation;
        if r.truncated {
            break;
        }
    }
    Ok(EpisodeOutcome {
        seed,
        report: env.finalize()?,
        discounted_return: discounted,
        reward_sum,
        steps: env.steps_done(),
        waiting_initial_ms: env.initial_waiting_ms(),
        waiting_final_ms: env.waiting_ms(),
    })
}

/// One episode on a fresh environment.
pub fn run_episode(scenario: &Scenario, config: &ScenarioConfig, controller: &mut dyn Controller) -> Result<EpisodeOutcome> {
    let mut env = Env::new(scenario.network.clone(), config.clone())?;
    run_env_episode(&mut env, controller)
}
