//! Exit criteria for the simulator and harness. Prints one line per
//! criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signal_dojo::batch::{evaluate_seeds, map_ordered};
use signal_dojo::controller::{make_controller, ControllerKind, EpisodeOutcome};
use signal_dojo::dynamics::{SegmentRef, Stage, World};
use signal_dojo::env::Env;
use signal_dojo::learner::{curve_ends, train, TrainParams};
use signal_dojo::metrics::delay;
use signal_dojo::network::geometry::{lane_segment, movement_chord, pose_on};
use signal_dojo::network::NetworkSpec;
use signal_dojo::observe::{bev_raster, default_extent, NoiseParams};
use signal_dojo::scenario::{builtin_scenario, ObsKind, Scenario, ScenarioConfig, BUILTIN_SCENARIOS};
use signal_dojo::signal::{aspect_idx, Aspect, SignalState, SignalTiming};

const EVAL_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn single() -> Scenario {
    builtin_scenario("single-intersection").expect("built-in scenario")
}

fn eval(s: &Scenario, cfg: &ScenarioConfig, kind: ControllerKind) -> Vec<EpisodeOutcome> {
    evaluate_seeds(s, cfg, kind, None, &EVAL_SEEDS).expect("evaluation")
}

fn ordering_runs() -> [(f64, f64); 3] {
    let s = single();
    [ControllerKind::MaxPressure, ControllerKind::Sotl, ControllerKind::Fixed].map(|k| {
        let out = eval(&s, &s.config, k);
        (
            mean(out.iter().map(|o| o.report.avg_travel_time)),
            mean(out.iter().map(|o| o.report.throughput_per_hour)),
        )
    })
}

fn criterion_1(runs: &[(f64, f64); 3], secs: f64) -> Verdict {
    let [(mp, _), (sotl, _), (fixed, _)] = *runs;
    verdict(
        mp < sotl && sotl < fixed && secs < 60.0,
        format!("travel time maxpressure {mp:.2} < sotl {sotl:.2} < fixed {fixed:.2} s ({secs:.1} s wall)"),
    )
}

fn criterion_2(runs: &[(f64, f64); 3]) -> Verdict {
    let (mp, fixed) = (runs[0].0, runs[2].0);
    let ratio = mp / fixed;
    verdict(ratio <= 0.75, format!("maxpressure/fixed travel time {ratio:.3} (limit 0.75)"))
}

fn criterion_3(runs: &[(f64, f64); 3]) -> Verdict {
    let [(_, mp), (_, sotl), (_, fixed)] = *runs;
    verdict(
        mp >= 1.02 * sotl && sotl >= 1.02 * fixed,
        format!(
            "throughput maxpressure {mp:.1} / sotl {sotl:.1} = {:.3}, sotl / fixed {fixed:.1} = {:.3} (each >= 1.02)",
            mp / sotl,
            sotl / fixed
        ),
    )
}

/// Violations in one trace of per-sub-step signal states.
fn signal_violations(trace: &[(u64, SignalState)], spec: &NetworkSpec, timing: &SignalTiming, dt_ms: u64) -> usize {
    let mut bad = 0;
    let n_mov = spec.movements().len();
    for (_, st) in trace {
        for a in 0..n_mov {
            for b in (a + 1)..n_mov {
                if spec.movements_conflict(a, b)
                    && aspect_idx(st, a, spec) == Aspect::Green
                    && aspect_idx(st, b, spec) == Aspect::Green
                {
                    bad += 1;
                }
            }
        }
    }
    // runs of (phase, yellow, length in ms)
    let mut runs: Vec<(usize, bool, u64)> = Vec::new();
    for (_, st) in trace {
        match runs.last_mut() {
            Some(r) if r.0 == st.current_phase && r.1 == st.in_yellow => r.2 += dt_ms,
            _ => runs.push((st.current_phase, st.in_yellow, dt_ms)),
        }
    }
    for (i, &(phase, yellow, len)) in runs.iter().enumerate() {
        let next = runs.get(i + 1);
        if yellow {
            match (i.checked_sub(1).map(|j| runs[j]), next) {
                (Some((p, false, _)), _) if p != phase => bad += 1,
                (None, _) | (Some((_, true, _)), _) => bad += 1,
                _ => {}
            }
            if let Some(&(p, y, _)) = next {
                if y || p == phase || len != timing.yellow_ms {
                    bad += 1;
                }
            }
        } else if let Some(&(p, y, _)) = next {
            // a green may only end in its own yellow, after the minimum green
            if !y || p != phase || len < timing.min_green_ms {
                bad += 1;
            }
        }
    }
    bad
}

fn criterion_4() -> Verdict {
    const SEQUENCES: u64 = 10_000;
    const STEPS: usize = 60;
    let mut total_bad = 0;
    let mut changes = 0;
    let mut details = Vec::new();
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).expect("built-in scenario");
        let ids: Vec<u64> = (0..SEQUENCES).collect();
        let res = map_ordered(&ids, |&i| {
            let cfg = s.config.with_seed(i);
            let mut env = Env::new(s.network.clone(), cfg.clone())?;
            env.enable_signal_trace();
            env.reset(cfg.clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE ^ i);
            let n = env.action_spec().n;
            for _ in 0..STEPS {
                env.step(rng.random_range(0..n))?;
            }
            let trace = env.signal_trace();
            let switched = trace.windows(2).filter(|w| w[0].1.current_phase != w[1].1.current_phase).count();
            Ok((signal_violations(trace, env.spec(), &cfg.timing, cfg.dt_ms), switched))
        })
        .expect("random action sequences");
        let bad: usize = res.iter().map(|r| r.0).sum();
        let sw: usize = res.iter().map(|r| r.1).sum();
        total_bad += bad;
        changes += sw;
        details.push(format!("{name}: {bad} violations over {sw} phase changes"));
    }
    verdict(
        total_bad == 0 && changes > 0,
        format!("{} random sequences per scenario; {}", SEQUENCES, details.join("; ")),
    )
}

/// Negative bumper gaps between neighbours on a segment and across the
/// lane-to-link and link-to-lane boundaries.
fn negative_gaps(world: &World) -> usize {
    let spec = world.spec();
    let len = world.params().vehicle_length;
    let tol = 1e-9;
    let mut bad = 0;
    let mut segs: Vec<SegmentRef> = (0..spec.lanes().len()).map(SegmentRef::Lane).collect();
    segs.extend((0..spec.movements().len()).map(SegmentRef::Internal));
    for &seg in &segs {
        let q = world.segment(seg);
        for w in q.iter().collect::<Vec<_>>().windows(2) {
            if w[0].position - len - w[1].position < -tol {
                bad += 1;
            }
        }
    }
    for m in 0..spec.movements().len() {
        let from = spec.movement_from(m);
        let to = spec.movement_to(m);
        let link = world.segment(SegmentRef::Internal(m));
        let lane_len = spec.lane(from).length;
        if let (Some(front), Some(back)) = (
            world.segment(SegmentRef::Lane(from)).iter().find(|v| v.movement == m),
            link.back(),
        ) {
            if (lane_len - front.position) + back.position - len < -tol {
                bad += 1;
            }
        }
        if let (Some(front), Some(back)) = (link.front(), world.segment(SegmentRef::Lane(to)).back()) {
            if (spec.internal_length() - front.position) + back.position - len < -tol {
                bad += 1;
            }
        }
    }
    bad
}

fn criterion_5() -> Verdict {
    let mut episodes = 0;
    let mut conservation = 0;
    let mut delay_bad = 0;
    let mut gap_bad = 0;
    let mut recorder_bad = 0;
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).expect("built-in scenario");
        for kind in [ControllerKind::Fixed, ControllerKind::Sotl, ControllerKind::MaxPressure, ControllerKind::Random] {
            for seed in 0..3 {
                let mut cfg = s.config.with_seed(seed);
                cfg.dynamics.sigma = 0.0;
                let mut env = Env::new(s.network.clone(), cfg.clone()).expect("env");
                let mut ctl = make_controller(kind, &s, None).expect("controller");
                ctl.reset(seed);
                let mut obs = env.reset(cfg.clone()).expect("reset");
                loop {
                    let a = ctl
                        .act(&signal_dojo::controller::Context {
                            observation: &obs,
                            world: env.world(),
                            signal: env.signal(),
                            timing: &cfg.timing,
                        })
                        .expect("act");
                    let r = env.step(a).expect("step");
                    let w = env.world();
                    let c = w.counters();
                    if c.spawned != c.done + c.in_network + c.pending {
                        conservation += 1;
                    }
                    let speeds: Vec<f64> = w
                        .vehicles()
                        .filter(|(seg, _)| matches!(seg, SegmentRef::Lane(l) if w.spec().incoming_lanes().contains(l)))
                        .map(|(_, v)| v.speed)
                        .collect();
                    let d = delay(&speeds, w.spec().max_incoming_speed());
                    if !(0.0..=1.0).contains(&d) {
                        delay_bad += 1;
                    }
                    gap_bad += negative_gaps(w);
                    obs = r.observation;
                    if r.truncated {
                        break;
                    }
                }
                recorder_bad += env.metrics().delay_out_of_range();
                episodes += 1;
            }
        }
    }
    let fails = conservation + delay_bad + gap_bad + recorder_bad as usize;
    verdict(
        fails == 0,
        format!(
            "{episodes} episodes: conservation breaks {conservation}, delay out of [0,1] {}, negative gaps {gap_bad}",
            delay_bad + recorder_bad as usize
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for name in BUILTIN_SCENARIOS {
        let s = builtin_scenario(name).expect("built-in scenario");
        for kind in [ControllerKind::Fixed, ControllerKind::Sotl, ControllerKind::MaxPressure, ControllerKind::Random] {
            for (seed, obs) in [(0, ObsKind::Feature), (5, ObsKind::NoisyFeature), (9, ObsKind::Feature)] {
                let cfg = s.config.with_seed(seed).with_obs(obs);
                let mut env = Env::new(s.network.clone(), cfg.clone()).expect("env");
                let mut ctl = make_controller(kind, &s, None).expect("controller");
                ctl.reset(seed);
                let mut obs = env.reset(cfg.clone()).expect("reset");
                let mut sum = 0.0;
                loop {
                    let a = ctl
                        .act(&signal_dojo::controller::Context {
                            observation: &obs,
                            world: env.world(),
                            signal: env.signal(),
                            timing: &cfg.timing,
                        })
                        .expect("act");
                    let r = env.step(a).expect("step");
                    sum += r.reward;
                    obs = r.observation;
                    if r.truncated {
                        break;
                    }
                }
                let expected = (env.initial_waiting_ms() as f64 - env.waiting_ms() as f64) / 1000.0;
                let rel = (sum - expected).abs() / expected.abs().max(1.0);
                worst = worst.max(rel);
                runs += 1;
            }
        }
    }
    verdict(worst <= 1e-9, format!("{runs} episodes, worst relative error {worst:.2e} (limit 1e-9)"))
}

fn cli_run(args: &[&str]) -> (Vec<u8>, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_signal-dojo"))
        .args(args)
        .output()
        .expect("spawn signal-dojo");
    (out.stdout, out.status.code().unwrap_or(-1))
}

fn criterion_7() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut identical = true;
    let mut notes = Vec::new();
    for controller in ["maxpressure", "random"] {
        let logs: Vec<_> = ["a", "b"].iter().map(|t| dir.path().join(format!("{controller}_{t}.csv"))).collect();
        let outs: Vec<_> = logs
            .iter()
            .map(|log| {
                let log = log.to_str().expect("utf-8 path");
                cli_run(&[
                    "run",
                    "--scenario",
                    "single-intersection",
                    "--controller",
                    controller,
                    "--seeds",
                    "0,1",
                    "--format",
                    "csv",
                    "--trajectory-log",
                    log,
                ])
            })
            .collect();
        let read = |p: &Path| std::fs::read(p).unwrap_or_default();
        let same = outs[0].1 == 0
            && outs[0] == outs[1]
            && !outs[0].0.is_empty()
            && read(&logs[0]) == read(&logs[1])
            && !read(&logs[0]).is_empty();
        identical &= same;
        notes.push(format!("{controller} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    // per-step world digests across two independent environments
    let s = single();
    let cfg = s.config.with_seed(3);
    let mut a = Env::new(s.network.clone(), cfg.clone()).expect("env");
    let mut b = Env::new(s.network.clone(), cfg.clone()).expect("env");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatched = 0;
    let mut steps = 0;
    while !a.is_truncated() {
        let act = rng.random_range(0..a.action_spec().n);
        let ra = a.step(act).expect("step");
        let rb = b.step(act).expect("step");
        steps += 1;
        if a.world().state_digest() != b.world().state_digest() || ra.reward != rb.reward {
            mismatched += 1;
        }
    }
    verdict(
        identical && mismatched == 0 && steps > 0,
        format!("cli runs: {}; digests: {mismatched} mismatches over {steps} steps", notes.join(", ")),
    )
}

fn criterion_8() -> Verdict {
    let noise = NoiseParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| noise.sample_factor(&mut rng)).collect();
    let m = mean(draws.iter().copied());
    let sd = (draws.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    verdict(
        (m - 0.700).abs() <= 0.005 && (sd - 0.075).abs() <= 0.005,
        format!("mean {m:.4} (0.700 +- 0.005), std {sd:.4} (0.075 +- 0.005) over {n} draws"),
    )
}

struct Learned {
    table: signal_dojo::learner::QTable,
    curve: Vec<f64>,
    secs: f64,
}

fn learn() -> Learned {
    let s = single();
    let t0 = Instant::now();
    let out = train(&s, &s.config, &TrainParams::default()).expect("training");
    Learned { table: out.table, curve: out.curve, secs: t0.elapsed().as_secs_f64() }
}

fn criterion_9(l: &Learned) -> Verdict {
    let s = single();
    let t0 = Instant::now();
    let rl = evaluate_seeds(&s, &s.config, ControllerKind::Rl, Some(&l.table), &EVAL_SEEDS).expect("evaluation");
    let rnd = eval(&s, &s.config, ControllerKind::Random);
    let secs = l.secs + t0.elapsed().as_secs_f64();
    let w_rl = mean(rl.iter().map(|o| o.report.mean_accumulated_waiting));
    let w_rnd = mean(rnd.iter().map(|o| o.report.mean_accumulated_waiting));
    let (first, last) = curve_ends(&l.curve, 10);
    let ratio = w_rl / w_rnd;
    verdict(
        l.curve.len() == 100 && ratio <= 0.8 && last > first && secs < 300.0,
        format!(
            "waiting q-learning {w_rl:.1} / random {w_rnd:.1} = {ratio:.3} (limit 0.80); curve first-10 {first:.1} -> last-10 {last:.1}; {secs:.1} s"
        ),
    )
}

fn criterion_10(l: &Learned) -> Verdict {
    let s = single();
    let clean = evaluate_seeds(&s, &s.config, ControllerKind::Rl, Some(&l.table), &EVAL_SEEDS).expect("evaluation");
    let noisy_cfg = s.config.with_obs(ObsKind::NoisyFeature);
    let noisy = evaluate_seeds(&s, &noisy_cfg, ControllerKind::Rl, Some(&l.table), &EVAL_SEEDS).expect("evaluation");
    let tc = mean(clean.iter().map(|o| o.report.avg_travel_time));
    let tn = mean(noisy.iter().map(|o| o.report.avg_travel_time));
    verdict(tn >= 1.05 * tc, format!("travel time noisy {tn:.2} / clean {tc:.2} = {:.3} (limit 1.05)", tn / tc))
}

/// Vehicle centre from the public geometry helpers.
fn centre(world: &World, seg: SegmentRef, pos: f64) -> (f64, f64) {
    let spec = world.spec();
    let (front, dir) = match seg {
        SegmentRef::Lane(l) => pose_on(lane_segment(spec, l), pos, spec.lane(l).length),
        SegmentRef::Internal(m) => pose_on(movement_chord(spec, m), pos, spec.internal_length()),
    };
    let half = world.params().vehicle_length / 2.0;
    (front.x - dir.x * half, front.y - dir.y * half)
}

fn criterion_11() -> Verdict {
    let s = single();
    let spec = s.network.clone();
    let full = default_extent(&spec);
    let world0 = World::new(spec.clone(), s.config.dynamics.clone(), &[], s.config.dt_ms, s.config.window_ms)
        .expect("world");
    let shape_ok = bev_raster(&world0, &SignalState::new(0), 256, full)
        .map(|r| r.shape() == [256, 256, 3] && r.pixels.len() == 256 * 256 * 3)
        .unwrap_or(false);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let (mut with, mut without) = (0, 0);
    for _ in 0..1000 {
        let mut w = world0.clone();
        let extent = rng.random_range(20.0..=full);
        let n = rng.random_range(0..=4);
        for _ in 0..n {
            let m = rng.random_range(0..spec.movements().len());
            let (stage, len) = match rng.random_range(0..3) {
                0 => (Stage::Approaching, spec.lane(spec.movement_from(m)).length),
                1 => (Stage::Crossing, spec.internal_length()),
                _ => (Stage::Departing, spec.lane(spec.movement_to(m)).length),
            };
            w.place_vehicle(m, stage, rng.random_range(0.0..=len), 0.0).expect("place");
        }
        let h = extent / 2.0;
        let inside = w.vehicles().any(|(seg, v)| {
            let (x, y) = centre(&w, seg, v.position);
            x.abs() <= h && y.abs() <= h
        });
        let phase = rng.random_range(0..spec.phase_count());
        let r = bev_raster(&w, &SignalState::new(phase), 256, extent).expect("raster");
        let lit = r.channel_mass(1) > 0.0;
        if lit != inside {
            mismatches += 1;
        }
        if inside {
            with += 1;
        } else {
            without += 1;
        }
    }
    verdict(
        shape_ok && mismatches == 0 && with > 0 && without > 0,
        format!(
            "256x256x3 shape {}; 1000 worlds ({with} with vehicles in extent, {without} without): {mismatches} mismatches",
            if shape_ok { "ok" } else { "WRONG" }
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("criterion {n:>2}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };

    let t0 = Instant::now();
    let runs = ordering_runs();
    let secs = t0.elapsed().as_secs_f64();
    report(1, criterion_1(&runs, secs));
    report(2, criterion_2(&runs));
    report(3, criterion_3(&runs));
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    let learned = learn();
    report(9, criterion_9(&learned));
    report(10, criterion_10(&learned));
    report(11, criterion_11());

    let failed: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing {failed:?}");
        std::process::exit(1);
    }
}
