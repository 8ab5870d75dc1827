//! Running many independent episodes: one environment per seed.
//!
//! With the `parallel` feature seeds are spread over a rayon pool capped by
//! `SIGNAL_DOJO_THREADS`; without it they run one after another. Results are
//! always returned in seed order and are identical either way.

use crate::controller::{make_controller, run_episode, ControllerKind, EpisodeOutcome};
use crate::error::{Error, Result};
use crate::learner::QTable;
use crate::scenario::{Scenario, ScenarioConfig};

pub const THREADS_ENV: &str = "SIGNAL_DOJO_THREADS";

/// Worker cap from the environment; `None` when unset, empty, or zero.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Applies `f` to every item, in parallel when enabled, keeping input order.
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || items.par_iter().map(&f).collect::<Result<Vec<R>>>();
        match thread_cap()? {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(run),
            None => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential reference, always available for comparison.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R>,
{
    items.iter().map(f).collect()
}

fn one_seed(
    scenario: &Scenario,
    config: &ScenarioConfig,
    kind: ControllerKind,
    table: Option<&QTable>,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let mut controller = make_controller(kind, scenario, table)?;
    run_episode(scenario, &config.with_seed(seed), controller.as_mut())
}

/// One episode per seed, in seed order.
pub fn evaluate_seeds(
    scenario: &Scenario,
    config: &ScenarioConfig,
    kind: ControllerKind,
    table: Option<&QTable>,
    seeds: &[u64],
) -> Result<Vec<EpisodeOutcome>> {
    map_ordered(seeds, |&seed| one_seed(scenario, config, kind, table, seed))
}

pub fn evaluate_seeds_sequential(
    scenario: &Scenario,
    config: &ScenarioConfig,
    kind: ControllerKind,
    table: Option<&QTable>,
    seeds: &[u64],
) -> Result<Vec<EpisodeOutcome>> {
    map_sequential(seeds, |&seed| one_seed(scenario, config, kind, table, seed))
}
