//! Command-line front end: `run`, `compare`, `train`, `render`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::batch::{evaluate_seeds, map_sequential};
use crate::controller::{make_controller, run_env_episode, Context, ControllerKind, EpisodeOutcome};
use crate::env::{Env, Manager, Observation, SimState};
use crate::error::{Error, Result};
use crate::learner::{curve_to_csv, train, QTable, TrainParams};
use crate::metrics::{aggregate, MetricsReport};
use crate::observe::RasterObs;
use crate::scenario::{resolve_scenario, ObsKind, Scenario};

#[derive(Debug, Parser)]
#[command(name = "signal-dojo", version, about = "Single-intersection traffic signal control benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one controller over several seeds and report per-seed metrics.
    Run(RunArgs),
    /// Compare controllers on the same seeds.
    Compare(CompareArgs),
    /// Train the tabular Q-learner and evaluate its greedy policy.
    Train(TrainArgs),
    /// Dump raster observations as PPM images.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Toml,
    Table,
}

fn parse_controller(s: &str) -> std::result::Result<ControllerKind, String> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = ControllerKind::ALL.iter().map(|k| k.token()).collect();
        format!("unknown controller `{s}` (expected one of: {})", known.join(", "))
    })
}

fn parse_obs(s: &str) -> std::result::Result<ObsKind, String> {
    s.parse().map_err(|_| {
        let known: Vec<&str> = ObsKind::ALL.iter().map(|k| k.token()).collect();
        format!("unknown observation kind `{s}` (expected one of: {})", known.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long, default_value = "single-intersection")]
    pub scenario: String,
    /// Observation kind fed to the controller.
    #[arg(long, value_parser = parse_obs, default_value = "feature")]
    pub obs: ObsKind,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// fixed, sotl, maxpressure, random, or rl (needs --qtable).
    #[arg(long, value_parser = parse_controller)]
    pub controller: Option<ControllerKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Per-vehicle, per-second CSV log.
    #[arg(long)]
    pub trajectory_log: Option<PathBuf>,
    #[arg(long)]
    pub qtable: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated list; rows keep this order.
    #[arg(long, value_parser = parse_controller, value_delimiter = ',', required = true)]
    pub controller: Vec<ControllerKind>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    #[arg(long)]
    pub qtable: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Base seed; episode k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluation seeds for the greedy policy.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Output directory for qtable.txt, curve.csv, and eval.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, default_value = "single-intersection")]
    pub scenario: String,
    #[arg(long, value_parser = parse_controller, default_value = "maxpressure")]
    pub controller: ControllerKind,
    /// Agent step indices to dump; 0 is the state right after reset.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub steps: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// bev or multiview.
    #[arg(long, value_parser = parse_obs, default_value = "bev")]
    pub obs: ObsKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub qtable: Option<PathBuf>,
}

/// Usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

fn load_table(path: &Option<PathBuf>) -> Result<Option<QTable>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            Ok(Some(QTable::from_text(&text)?))
        }
        None => Ok(None),
    }
}

fn check_seeds(seeds: &[u64]) -> std::result::Result<(), CliError> {
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds must not be empty".into()));
    }
    Ok(())
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Per-seed rows followed by `mean` and `std` rows.
pub fn runs_csv(outcomes: &[EpisodeOutcome]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["seed"];
    header.extend(MetricsReport::COLUMNS);
    header.push("discounted_return");
    w.write_record(&header).map_err(csv_err)?;
    for o in outcomes {
        let mut row = vec![o.seed.to_string()];
        row.extend(o.report.values().iter().map(|v| v.to_string()));
        row.push(o.discounted_return.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report).collect();
    let returns: Vec<f64> = outcomes.iter().map(|o| o.discounted_return).collect();
    let (mean, std) = aggregate(&reports);
    let (rm, rs) = crate::metrics::mean_std(&returns);
    for (label, vals, r) in [("mean", mean, rm), ("std", std, rs)] {
        let mut row = vec![label.to_string()];
        row.extend(vals.iter().map(|v| v.to_string()));
        row.push(r.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct RunDoc<'a> {
    scenario: &'a str,
    controller: &'a str,
    runs: Vec<RunRow>,
    mean: MetricsReportF,
    std: MetricsReportF,
}

#[derive(Serialize)]
struct RunRow {
    seed: u64,
    discounted_return: f64,
    #[serde(flatten)]
    report: MetricsReport,
}

/// Aggregates keep fractional counts.
#[derive(Serialize)]
struct MetricsReportF {
    avg_travel_time: f64,
    throughput_per_hour: f64,
    mean_queue: f64,
    mean_delay: f64,
    mean_accumulated_waiting: f64,
    co2_rate: f64,
    completed: f64,
    unfinished: f64,
}

impl From<[f64; 8]> for MetricsReportF {
    fn from(v: [f64; 8]) -> Self {
        MetricsReportF {
            avg_travel_time: v[0],
            throughput_per_hour: v[1],
            mean_queue: v[2],
            mean_delay: v[3],
            mean_accumulated_waiting: v[4],
            co2_rate: v[5],
            completed: v[6],
            unfinished: v[7],
        }
    }
}

fn runs_toml(scenario: &str, controller: &str, outcomes: &[EpisodeOutcome]) -> Result<String> {
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report).collect();
    let (mean, std) = aggregate(&reports);
    let doc = RunDoc {
        scenario,
        controller,
        runs: outcomes
            .iter()
            .map(|o| RunRow { seed: o.seed, discounted_return: o.discounted_return, report: o.report })
            .collect(),
        mean: mean.into(),
        std: std.into(),
    };
    toml::to_string(&doc).map_err(|e| Error::Io(e.to_string()))
}

/// Appends one CSV row per vehicle after every physics step.
struct TrajectoryLogger {
    seed: u64,
    sink: Arc<Mutex<String>>,
}

impl Manager for TrajectoryLogger {
    fn name(&self) -> &str {
        "trajectory"
    }

    fn step(&mut self, sim: &mut SimState) -> Result<()> {
        let world = &sim.world;
        let t = world.time_ms() as f64 / 1000.0;
        let mut out = self.sink.lock().expect("trajectory sink poisoned");
        for (seg, v) in world.vehicles() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.seed,
                t,
                v.id,
                world.segment_label(seg),
                v.position,
                v.speed,
                v.waiting_accum_s()
            );
        }
        Ok(())
    }
}

fn run_with_log(scenario: &Scenario, args: &RunArgs, kind: ControllerKind, table: Option<&QTable>) -> Result<(Vec<EpisodeOutcome>, String)> {
    let sink = Arc::new(Mutex::new(String::from("seed,t,id,lane,position,speed,waiting_accum\n")));
    let config = scenario.config.with_obs(args.scenario.obs);
    let outcomes = map_sequential(&args.seeds, |&seed| {
        let mut env = Env::new(scenario.network.clone(), config.with_seed(seed))?;
        env.register_manager(Box::new(TrajectoryLogger { seed, sink: sink.clone() }));
        let mut c = make_controller(kind, scenario, table)?;
        run_env_episode(&mut env, c.as_mut())
    })?;
    let log = std::mem::take(&mut *sink.lock().expect("trajectory sink poisoned"));
    Ok((outcomes, log))
}

fn resolve_kind(scenario: &Scenario, given: Option<ControllerKind>) -> std::result::Result<ControllerKind, CliError> {
    if let Some(k) = given {
        return Ok(k);
    }
    match &scenario.controllers.default_controller {
        Some(tok) => parse_controller(tok).map_err(CliError::Usage),
        None => Err(CliError::Usage("--controller is required (the scenario names no default)".into())),
    }
}

pub fn cmd_run(args: &RunArgs) -> std::result::Result<(), CliError> {
    check_seeds(&args.seeds)?;
    if args.format == Format::Table {
        return Err(CliError::Usage("run supports --format csv or toml".into()));
    }
    let scenario = resolve_scenario(&args.scenario.scenario)?;
    let kind = resolve_kind(&scenario, args.controller)?;
    let table = load_table(&args.qtable)?;
    let outcomes = match &args.trajectory_log {
        Some(path) => {
            let (outcomes, log) = run_with_log(&scenario, args, kind, table.as_ref())?;
            emit(&Some(path.clone()), &log)?;
            outcomes
        }
        None => {
            let config = scenario.config.with_obs(args.scenario.obs);
            evaluate_seeds(&scenario, &config, kind, table.as_ref(), &args.seeds)?
        }
    };
    let text = match args.format {
        Format::Toml => runs_toml(&scenario.name, kind.token(), &outcomes)?,
        _ => runs_csv(&outcomes)?,
    };
    emit(&args.out, &text)?;
    Ok(())
}

/// `mean ± std` with a fixed number of decimals.
fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Aligned table: one row per controller, the six headline metrics.
pub fn compare_table(rows: &[(ControllerKind, Vec<EpisodeOutcome>)]) -> String {
    let mut header = vec!["controller".to_string()];
    header.extend(MetricsReport::HEADLINE.iter().map(|s| s.to_string()));
    let mut cells = vec![header];
    for (kind, outcomes) in rows {
        let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report).collect();
        let (mean, std) = aggregate(&reports);
        let mut line = vec![kind.token().to_string()];
        for name in MetricsReport::HEADLINE {
            let i = MetricsReport::COLUMNS.iter().position(|c| *c == name).expect("headline column");
            line.push(pm(mean[i], std[i]));
        }
        cells.push(line);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    }
    out
}

fn compare_csv(rows: &[(ControllerKind, Vec<EpisodeOutcome>)]) -> Result<String> {
    let mut out = String::new();
    for (i, (kind, outcomes)) in rows.iter().enumerate() {
        let body = runs_csv(outcomes)?;
        for (j, line) in body.lines().enumerate() {
            if j == 0 {
                if i == 0 {
                    let _ = writeln!(out, "controller,{line}");
                }
                continue;
            }
            let _ = writeln!(out, "{},{line}", kind.token());
        }
    }
    Ok(out)
}

pub fn cmd_compare(args: &CompareArgs) -> std::result::Result<(), CliError> {
    check_seeds(&args.seeds)?;
    if args.controller.len() < 2 {
        return Err(CliError::Usage("compare needs at least two controllers".into()));
    }
    let scenario = resolve_scenario(&args.scenario.scenario)?;
    let table = load_table(&args.qtable)?;
    let config = scenario.config.with_obs(args.scenario.obs);
    let mut rows = Vec::with_capacity(args.controller.len());
    for &kind in &args.controller {
        rows.push((kind, evaluate_seeds(&scenario, &config, kind, table.as_ref(), &args.seeds)?));
    }
    let text = match args.format {
        Format::Table => compare_table(&rows),
        Format::Csv => compare_csv(&rows)?,
        Format::Toml => {
            let mut all = toml::Table::new();
            for (kind, outcomes) in &rows {
                let body = runs_toml(&scenario.name, kind.token(), outcomes)?;
                let doc: toml::Table = toml::from_str(&body).map_err(|e| Error::Io(e.to_string()))?;
                all.insert(kind.token().to_string(), toml::Value::Table(doc));
            }
            toml::to_string(&all).map_err(|e| Error::Io(e.to_string()))?
        }
    };
    emit(&args.out, &text)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> std::result::Result<(), CliError> {
    check_seeds(&args.seeds)?;
    let scenario = resolve_scenario(&args.scenario.scenario)?;
    let config = scenario.config.with_obs(args.scenario.obs).with_seed(args.seed);
    let trained = train(&scenario, &config, &TrainParams { episodes: args.episodes, ..TrainParams::default() })?;
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    fs::write(args.out.join("qtable.txt"), trained.table.to_text()).map_err(Error::from)?;
    fs::write(args.out.join("curve.csv"), curve_to_csv(&trained.curve)).map_err(Error::from)?;
    let outcomes = evaluate_seeds(&scenario, &config, ControllerKind::Rl, Some(&trained.table), &args.seeds)?;
    let report = runs_csv(&outcomes)?;
    fs::write(args.out.join("eval.csv"), &report).map_err(Error::from)?;
    emit(&None, &report)?;
    Ok(())
}

fn write_ppm(path: &Path, r: &RasterObs) -> Result<()> {
    let res = r.resolution as u32;
    let bytes: Vec<u8> = r.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = image::RgbImage::from_raw(res, res, bytes)
        .ok_or_else(|| Error::Io("raster buffer has the wrong size".into()))?;
    img.save_with_format(path, image::ImageFormat::Pnm)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn dump_frame(dir: &Path, step: u64, obs: &Observation, approaches: &[String]) -> Result<()> {
    match obs {
        Observation::Raster(r) => write_ppm(&dir.join(format!("step_{step:04}.ppm")), r),
        Observation::MultiView(views) => {
            for (v, name) in views.iter().zip(approaches) {
                write_ppm(&dir.join(format!("step_{step:04}_{name}.ppm")), v)?;
            }
            Ok(())
        }
        Observation::Features(_) => Err(Error::Config("render needs --obs bev or multiview".into())),
    }
}

pub fn cmd_render(args: &RenderArgs) -> std::result::Result<(), CliError> {
    if !matches!(args.obs, ObsKind::Bev | ObsKind::MultiView) {
        return Err(CliError::Usage("render supports --obs bev or multiview".into()));
    }
    if args.steps.is_empty() {
        return Err(CliError::Usage("--steps must not be empty".into()));
    }
    let scenario = resolve_scenario(&args.scenario)?;
    let table = load_table(&args.qtable)?;
    let mut config = scenario.config.with_obs(args.obs).with_seed(args.seed);
    config.raster_resolution = args.resolution;
    let mut env = Env::new(scenario.network.clone(), config.clone())?;
    // The greedy controller reads features, so it gets a feature twin of the env.
    let mut twin = match args.controller {
        ControllerKind::Rl => Some(Env::new(scenario.network.clone(), config.with_obs(ObsKind::Feature))?),
        _ => None,
    };
    let mut controller = make_controller(args.controller, &scenario, table.as_ref())?;
    controller.reset(args.seed);
    fs::create_dir_all(&args.out).map_err(Error::from)?;
    let approaches: Vec<String> = scenario.network.approaches().iter().map(|a| a.id.clone()).collect();

    let last = *args.steps.iter().max().expect("non-empty");
    let mut obs = env.reset(config.clone())?;
    let mut feat = match &mut twin {
        Some(t) => Some(t.reset(config.with_obs(ObsKind::Feature))?),
        None => None,
    };
    for k in 0..=last {
        if args.steps.contains(&k) {
            dump_frame(&args.out, k, &obs, &approaches)?;
        }
        if k == last || env.is_truncated() {
            break;
        }
        let action = {
            let ctx = Context {
                observation: feat.as_ref().unwrap_or(&obs),
                world: env.world(),
                signal: env.signal(),
                timing: &env.config().timing,
            };
            controller.act(&ctx)?
        };
        obs = env.step(action)?.observation;
        if let Some(t) = &mut twin {
            feat = Some(t.step(action)?.observation);
        }
    }
    Ok(())
}
