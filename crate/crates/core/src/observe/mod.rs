//! Observation builders: clean features, noisy features, and top-down rasters.

mod raster;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::World;
use crate::signal::{SignalState, SignalTiming};

pub use raster::{bev_raster, default_extent, multi_view_raster, view_near_band_mass, RasterObs};

/// Feature layout: `[phase one-hot (G) | min-green flag | densities (L) | queues (L)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureObs {
    pub phase_onehot: Vec<f64>,
    pub min_green_flag: f64,
    pub densities: Vec<f64>,
    pub queues_norm: Vec<f64>,
}

impl FeatureObs {
    pub fn len(&self) -> usize {
        self.phase_onehot.len() + 1 + self.densities.len() + self.queues_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.phase_onehot);
        out.push(self.min_green_flag);
        out.extend_from_slice(&self.densities);
        out.extend_from_slice(&self.queues_norm);
        out
    }

    pub fn phase(&self) -> usize {
        crate::signal::argmax_lowest(&self.phase_onehot)
    }
}

/// Feature vector length for a network with `phases` phases and `lanes` incoming lanes.
pub fn feature_len(phases: usize, lanes: usize) -> usize {
    phases + 1 + 2 * lanes
}

/// During a yellow the one-hot still shows the phase being cleared.
pub fn feature_obs(world: &World, signal: &SignalState, timing: &SignalTiming) -> FeatureObs {
    let spec = world.spec();
    let mut phase_onehot = vec![0.0; spec.phase_count()];
    phase_onehot[signal.current_phase] = 1.0;
    let lanes = spec.incoming_lanes();
    FeatureObs {
        phase_onehot,
        min_green_flag: if signal.phase_elapsed_ms >= timing.min_green_ms { 1.0 } else { 0.0 },
        densities: lanes.iter().map(|&l| world.lane_density_idx(l)).collect(),
        queues_norm: lanes
            .iter()
            .map(|&l| {
                (world.queue_count_idx(l) as f64 / spec.lane(l).capacity as f64).clamp(0.0, 1.0)
            })
            .collect(),
    }
}

/// Multiplicative measurement noise on densities and queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub mean_factor: f64,
    pub std_factor: f64,
    pub clamp_low: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { mean_factor: 0.70, std_factor: 0.075, clamp_low: 0.0 }
    }
}

impl NoiseParams {
    pub fn distribution(&self) -> Normal<f64> {
        Normal::new(self.mean_factor, self.std_factor.max(0.0))
            .expect("finite mean and non-negative std")
    }

    pub fn sample_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.distribution().sample(rng)
    }

    pub fn apply(&self, value: f64, factor: f64) -> f64 {
        (value * factor).clamp(self.clamp_low, 1.0)
    }
}

/// Same as [`feature_obs`] with every density and queue entry scaled by an
/// independent draw from `Normal(mean_factor, std_factor)`.
pub fn noisy_feature_obs<R: Rng + ?Sized>(
    world: &World,
    signal: &SignalState,
    timing: &SignalTiming,
    noise: &NoiseParams,
    rng: &mut R,
) -> FeatureObs {
    let mut obs = feature_obs(world, signal, timing);
    let dist = noise.distribution();
    for x in obs.densities.iter_mut().chain(obs.queues_norm.iter_mut()) {
        *x = noise.apply(*x, dist.sample(rng));
    }
    obs
}
