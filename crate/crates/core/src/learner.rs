//! Tabular Q-learning over binned feature observations.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{Controller, Greedy};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::observe::FeatureObs;
use crate::scenario::{Scenario, ScenarioConfig};
use crate::signal::argmax_lowest;

const EXPLORE_STREAM: u64 = 2;

/// `(phase, min-green flag, bin per density, bin per queue)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey(pub Vec<u16>);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl StateKey {
    fn parse(s: &str) -> Result<StateKey> {
        s.split(',')
            .map(|t| t.trim().parse::<u16>().map_err(|e| Error::Parse(format!("state key `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(StateKey)
    }
}

pub fn discretize(obs: &FeatureObs, bins: usize) -> StateKey {
    let bins = bins.max(1);
    let bin = |x: f64| ((x.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1) as u16;
    let mut key = Vec::with_capacity(2 + obs.densities.len() + obs.queues_norm.len());
    key.push(obs.phase() as u16);
    key.push(if obs.min_green_flag >= 0.5 { 1 } else { 0 });
    key.extend(obs.densities.iter().map(|&x| bin(x)));
    key.extend(obs.queues_norm.iter().map(|&x| bin(x)));
    StateKey(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: BTreeMap<StateKey, Vec<f64>>,
    /// Update count per action; absent rows mean "no visit information".
    visits: BTreeMap<StateKey, Vec<u32>>,
    n_actions: usize,
    pub alpha: f64,
    pub gamma: f64,
    bins: usize,
}

impl QTable {
    pub fn new(n_actions: usize, alpha: f64, gamma: f64, bins: usize) -> Result<QTable> {
        if n_actions == 0 {
            return Err(Error::Config("Q-table needs at least one action".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) && alpha != 0.0 {
            return Err(Error::Config("alpha must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        Ok(QTable { values: BTreeMap::new(), visits: BTreeMap::new(), n_actions, alpha, gamma, bins })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values for `s`; unseen states read as zeros.
    pub fn get(&self, s: &StateKey) -> Vec<f64> {
        self.values.get(s).cloned().unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn set(&mut self, s: StateKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_actions {
            return Err(Error::Config(format!("expected {} action values, got {}", self.n_actions, values.len())));
        }
        self.values.insert(s, values);
        Ok(())
    }

    pub fn max_value(&self, s: &StateKey) -> f64 {
        self.values
            .get(s)
            .map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn greedy(&self, s: &StateKey) -> usize {
        self.values.get(s).map_or(0, |v| argmax_lowest(v))
    }

    /// Times action `a` was updated in state `s`.
    pub fn visits(&self, s: &StateKey, a: usize) -> u32 {
        self.visits.get(s).and_then(|v| v.get(a)).copied().unwrap_or(0)
    }

    /// Actions in `s` that carry learned values: those updated at least once,
    /// or every action when the row has no visit information (hand-set rows).
    fn trusted(&self, s: &StateKey) -> Option<Vec<usize>> {
        self.values.get(s)?;
        match self.visits.get(s) {
            None => Some((0..self.n_actions).collect()),
            Some(c) => {
                let tried: Vec<usize> = (0..self.n_actions).filter(|&a| c[a] > 0).collect();
                (!tried.is_empty()).then_some(tried)
            }
        }
    }

    fn argmax_among(&self, s: &StateKey, actions: &[usize]) -> usize {
        let v = &self.values[s];
        let mut best = actions[0];
        for &a in &actions[1..] {
            if v[a] > v[best] {
                best = a;
            }
        }
        best
    }

    /// Evaluation policy. Only actions that were actually updated compete, so
    /// a never-tried action's zero cannot beat a learned negative value. A
    /// key with no tried action borrows the key with the closest traffic
    /// bins that has one (L1 over densities and queues, phase and flag
    /// ignored, first in key order on ties). Action 0 for an empty table.
    /// Ties take the lowest index throughout.
    pub fn greedy_trusted(&self, s: &StateKey) -> usize {
        if let Some(acts) = self.trusted(s) {
            return self.argmax_among(s, &acts);
        }
        let head = s.0.len().min(2);
        let mut best: Option<(u32, &StateKey, Vec<usize>)> = None;
        for k in self.values.keys() {
            if k.0.len() != s.0.len() {
                continue;
            }
            let d: u32 = k.0[head..]
                .iter()
                .zip(&s.0[head..])
                .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs())
                .sum();
            if best.as_ref().is_some_and(|(bd, _, _)| d >= *bd) {
                continue;
            }
            if let Some(acts) = self.trusted(k) {
                best = Some((d, k, acts));
            }
        }
        best.map_or(0, |(_, k, acts)| self.argmax_among(k, &acts))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &Vec<f64>)> {
        self.values.iter()
    }

    /// Largest absolute value stored.
    pub fn max_abs(&self) -> f64 {
        self.values.values().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sorted `key<TAB>values<TAB>visits` lines after a small header.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "actions = {}", self.n_actions);
        let _ = writeln!(out, "bins = {}", self.bins);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "gamma = {}", self.gamma);
        for (k, v) in &self.values {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            match self.visits.get(k) {
                Some(c) => {
                    let counts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
                    let _ = writeln!(out, "{k}\t{}\t{}", vals.join(" "), counts.join(" "));
                }
                None => {
                    let _ = writeln!(out, "{k}\t{}", vals.join(" "));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<QTable> {
        let mut lines = text.lines();
        let mut header = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("Q-table: missing `{name}`")))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("Q-table: bad header line `{line}`")))?;
            if k.trim() != name {
                return Err(Error::Parse(format!("Q-table: expected `{name}`, found `{}`", k.trim())));
            }
            Ok(v.trim().to_string())
        };
        let bad = |e: &dyn fmt::Display| Error::Parse(format!("Q-table header: {e}"));
        let n_actions: usize = header("actions")?.parse().map_err(|e| bad(&e))?;
        let bins: usize = header("bins")?.parse().map_err(|e| bad(&e))?;
        let alpha: f64 = header("alpha")?.parse().map_err(|e| bad(&e))?;
        let gamma: f64 = header("gamma")?.parse().map_err(|e| bad(&e))?;
        let mut table = QTable::new(n_actions, alpha, gamma, bins)?;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("Q-table: bad row `{line}`")))?;
            let (v, counts) = match v.split_once('\t') {
                Some((v, c)) => (v, Some(c)),
                None => (v, None),
            };
            let values = v
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|e| Error::Parse(format!("Q-table value `{x}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let key = StateKey::parse(k)?;
            table.set(key.clone(), values)?;
            if let Some(c) = counts {
                let counts = c
                    .split_whitespace()
                    .map(|x| x.parse::<u32>().map_err(|e| Error::Parse(format!("Q-table count `{x}`: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if counts.len() != n_actions {
                    return Err(Error::Parse(format!("Q-table: expected {n_actions} counts in `{line}`")));
                }
                table.visits.insert(key, counts);
            }
        }
        Ok(table)
    }
}

/// `Q[s][a] += alpha·(r + gamma·max Q[s'] - Q[s][a])`.
pub fn q_update(q: &mut QTable, s: &StateKey, a: usize, r: f64, s_next: &StateKey) {
    let target = r + q.gamma * q.max_value(s_next);
    let alpha = q.alpha;
    let n = q.n_actions;
    let row = q.values.entry(s.clone()).or_insert_with(|| vec![0.0; n]);
    row[a] += alpha * (target - row[a]);
    q.visits.entry(s.clone()).or_insert_with(|| vec![0; n])[a] += 1;
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, s: &StateKey, epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < epsilon {
        rng.random_range(0..q.n_actions)
    } else {
        q.greedy(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub episodes: usize,
    pub alpha: f64,
    pub bins: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub decay_episodes: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { episodes: 100, alpha: 0.1, bins: 4, epsilon_start: 1.0, epsilon_end: 0.05, decay_episodes: 50 }
    }
}

impl TrainParams {
    /// Linear decay from start to end over `decay_episodes`, then flat.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: QTable,
    /// Undiscounted reward sum per episode.
    pub curve: Vec<f64>,
}

/// Episode `k` runs with seed `config.seed + k`.
pub fn train(scenario: &Scenario, config: &ScenarioConfig, params: &TrainParams) -> Result<TrainOutcome> {
    if !config.obs_kind.is_feature() {
        return Err(Error::UnsupportedObsKind(config.obs_kind.token().to_string()));
    }
    let mut table = QTable::new(scenario.network.phase_count(), params.alpha, config.gamma, params.bins)?;
    let mut curve = Vec::with_capacity(params.episodes);
    if params.episodes == 0 {
        return Ok(TrainOutcome { table, curve });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(EXPLORE_STREAM);
    let mut env = Env::new(scenario.network.clone(), config.clone())?;
    for k in 0..params.episodes {
        let eps = params.epsilon(k);
        let obs = env.reset(config.with_seed(config.seed.wrapping_add(k as u64)))?;
        let mut s = discretize(obs.features().expect("feature observation"), params.bins);
        let mut total = 0.0;
        loop {
            let a = epsilon_greedy(&table, &s, eps, &mut rng);
            let r = env.step(a)?;
            let s_next = discretize(r.observation.features().expect("feature observation"), params.bins);
            q_update(&mut table, &s, a, r.reward, &s_next);
            total += r.reward;
            s = s_next;
            if r.truncated {
                break;
            }
        }
        curve.push(total);
    }
    Ok(TrainOutcome { table, curve })
}

pub fn curve_to_csv(curve: &[f64]) -> String {
    let mut out = String::from("episode,reward_sum\n");
    for (k, r) in curve.iter().enumerate() {
        let _ = writeln!(out, "{k},{r}");
    }
    out
}

/// Greedy controller from a trained table.
pub fn greedy_controller(table: &QTable) -> Box<dyn Controller> {
    Box::new(Greedy::new(table.clone(), table.bins()))
}

/// Mean of the first and last `n` entries.
pub fn curve_ends(curve: &[f64], n: usize) -> (f64, f64) {
    let n = n.min(curve.len()).max(1);
    if curve.is_empty() {
        return (0.0, 0.0);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&curve[..n]), mean(&curve[curve.len() - n..]))
}
