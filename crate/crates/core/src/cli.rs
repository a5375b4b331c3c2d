//! Command-line front end.
//!
//! Every subcommand resolves its parameters from three layers: built-in defaults, an
//! optional TOML file (`--config`), and flags, in increasing priority. The config file
//! may set keys at top level or in a table named after the subcommand. The resolved
//! parameters are written to `config.resolved` in the output directory, and that file can
//! be passed back with `--config` to repeat the run.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bitmask::BitMask;
use crate::continuous::{
    fixture_cloud, forward_trajectory_with, histogram_entropy, mixture_score, ou_moments, reverse_trajectory_rng,
    NoiseSchedule, ReverseInit, TrainingCloud,
};
use crate::discovery::{
    burger_targets, continuous_discovery_many, discrete_discovery_many, distance_to_manifold, slope_fit,
    DiscoveryReport, DiscoveryTarget, SlopePoint, TargetState, BURGER_TOLERANCE_GRAMS,
};
use crate::discrete::{
    closed_form_marginal, distance_class_prob, evolve, fixture_distribution, forward_sweep, FlipSchedule,
    ProbabilityTable, ReverseSampler,
};
use crate::error::{Error, Result};
use crate::mask_model::{
    sample_masks, train_mask_model, MaskArchitecture, MaskCheckpointMeta, MaskModel, RetentionSchedule,
};
use crate::nn::{Activation, Mlp, MlpSpec, Parameters};
use crate::rng::{derive_seed, stream};
use crate::stats::{compare_with, summarize, write_outputs, CompareOptions};
use crate::synthetic::{synthetic_dataset, SyntheticSpec};
use crate::training::{TrainConfig, TrainingLog};
use crate::value_model::{sample_weights_batch, train_value_model, ValueArchitecture, ValueCheckpointMeta, ValueModel};
use crate::vocab::{
    load_dataset, load_recipes_in, normalize_weights, resolve_format, three_ingredient_fixture, write_jsonl,
    DataFormat, Dataset, NormalizationMode, Recipe,
};

#[derive(Parser, Debug)]
#[command(
    name = "recipe-diffusion",
    version,
    about = "Exact and learned diffusion over recipes: demos, discovery sweeps, training, generation",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(flatten)]
    global: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
struct GlobalFlags {
    /// TOML file with parameter defaults; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensembles and sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    #[serde(skip)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact forward and reverse diffusion of the two-burger fixture on the hypercube.
    Demo3(Demo3Flags),
    /// Exact forward and reverse diffusion of the fixture in weight space.
    #[command(name = "demo3-continuous")]
    Demo3Continuous(Demo3ContinuousFlags),
    /// Monte-Carlo discovery probabilities of target recipes under forward diffusion.
    Discover(DiscoverFlags),
    /// Train the mask model on a recipe file.
    #[command(name = "train-mask")]
    TrainMask(TrainMaskFlags),
    /// Train the conditional weight model on a recipe file.
    #[command(name = "train-value")]
    TrainValue(TrainValueFlags),
    /// Sample ingredient masks from a trained mask model.
    Sample(SampleFlags),
    /// Generate full recipes: masks from the mask model, then weights from the value model.
    Generate(GenerateFlags),
    /// Compare generated recipes against training recipes.
    Stats(StatsFlags),
    /// Run the analytic self-checks.
    Verify(VerifyFlags),
}

/// Parses `argv` (including the program name), runs the subcommand and maps the outcome
/// to an exit code: 0 success, 1 failed run or failed check, 2 usage error.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn dispatch(cli: &Cli) -> CliResult<bool> {
    let file = match &cli.global.config {
        Some(path) => Some(read_config_file(path)?),
        None => None,
    };
    let file = file.as_ref();
    let g = &cli.global;
    match &cli.command {
        Command::Demo3(f) => execute::<Demo3Config>(file, g, f, demo3),
        Command::Demo3Continuous(f) => execute::<Demo3ContinuousConfig>(file, g, f, demo3_continuous),
        Command::Discover(f) => execute::<DiscoverConfig>(file, g, f, discover),
        Command::TrainMask(f) => execute::<TrainMaskConfig>(file, g, f, train_mask),
        Command::TrainValue(f) => execute::<TrainValueConfig>(file, g, f, train_value),
        Command::Sample(f) => execute::<SampleConfig>(file, g, f, sample),
        Command::Generate(f) => execute::<GenerateConfig>(file, g, f, generate),
        Command::Stats(f) => execute::<StatsConfig>(file, g, f, stats),
        Command::Verify(f) => execute::<VerifyConfig>(file, g, f, verify),
    }
}

trait RunConfig: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;
    fn common(&self) -> &Common;
    fn validate(&self) -> CliResult<()> {
        Ok(())
    }
}

/// Parameters shared by every subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Common {
    seed: u64,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

impl Common {
    fn named(name: &str) -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out").join(name),
            threads: None,
        }
    }
}

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    match serde_json::to_value(table).map_err(|e| usage(format!("config {}: {e}", path.display())))? {
        Value::Object(m) => Ok(m),
        _ => Err(usage(format!("config {} is not a table", path.display()))),
    }
}

fn overlay(base: &mut Map<String, Value>, layer: Value) {
    if let Value::Object(m) = layer {
        for (k, v) in m {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
}

fn resolve<C: RunConfig>(
    file: Option<&Map<String, Value>>,
    global: &GlobalFlags,
    flags: &impl Serialize,
) -> CliResult<C> {
    let Value::Object(mut merged) = serde_json::to_value(C::default()).map_err(|e| usage(e.to_string()))? else {
        return Err(usage("internal: config is not an object"));
    };
    // `common` is flattened into the top level of the resolved table.
    if let Some(Value::Object(common)) = merged.remove("common") {
        merged.extend(common);
        merged.entry("threads").or_insert(Value::Null);
    }
    let known: Vec<String> = merged.keys().cloned().collect();
    if let Some(file) = file {
        for (k, v) in file {
            if v.is_object() || k == "command" {
                continue;
            }
            if known.contains(k) {
                merged.insert(k.clone(), v.clone());
            } else {
                log::debug!("config key '{k}' does not apply to {}", C::NAME);
            }
        }
        if let Some(section) = file.get(C::NAME) {
            let Value::Object(section) = section else {
                return Err(usage(format!("config entry '{}' must be a table", C::NAME)));
            };
            for (k, v) in section {
                if !known.contains(k) {
                    return Err(usage(format!(
                        "unknown key '{k}' in [{}]; valid keys: {}",
                        C::NAME,
                        known.join(", ")
                    )));
                }
                merged.insert(k.clone(), v.clone());
            }
        }
    }
    overlay(
        &mut merged,
        serde_json::to_value(global).map_err(|e| usage(e.to_string()))?,
    );
    overlay(
        &mut merged,
        serde_json::to_value(flags).map_err(|e| usage(e.to_string()))?,
    );
    let common_keys = ["seed", "out", "threads"];
    let mut common = Map::new();
    for k in common_keys {
        if let Some(v) = merged.remove(k) {
            common.insert(k.to_string(), v);
        }
    }
    merged.insert("common".into(), Value::Object(common));
    let config: C = serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("{}: {e}", C::NAME)))?;
    config.validate()?;
    Ok(config)
}

fn execute<C: RunConfig>(
    file: Option<&Map<String, Value>>,
    global: &GlobalFlags,
    flags: &impl Serialize,
    body: fn(&C) -> CliResult<bool>,
) -> CliResult<bool> {
    let config: C = resolve(file, global, flags)?;
    let common = config.common();
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    fs::create_dir_all(&common.out)?;
    write_resolved(&config)?;
    body(&config)
}

fn write_resolved<C: RunConfig>(config: &C) -> CliResult<()> {
    let Value::Object(mut m) = serde_json::to_value(config).map_err(|e| usage(e.to_string()))? else {
        return Err(usage("internal: config is not an object"));
    };
    let mut flat = Map::new();
    flat.insert("command".into(), Value::String(C::NAME.into()));
    if let Some(Value::Object(common)) = m.remove("common") {
        flat.extend(common);
    }
    flat.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    let text = toml::to_string(&flat).map_err(|e| CliError::Run(Error::Internal(e.to_string())))?;
    fs::write(config.common().out.join("config.resolved"), text)?;
    Ok(())
}

fn csv_writer(dir: &Path, name: &str) -> CliResult<csv::Writer<File>> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn num(v: f64) -> String {
    format!("{v:.9}")
}

fn state_label(index: usize, n: usize) -> String {
    BitMask::from_index(index, n)
        .bits()
        .iter()
        .map(|b| char::from(b'0' + b))
        .collect()
}

// demo3

#[derive(Args, Debug, Serialize)]
struct Demo3Flags {
    /// Per-ingredient flip probability per step.
    #[arg(long)]
    beta: Option<f64>,
    /// Diffusion steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Reverse trajectories in the sampled ensemble.
    #[arg(long)]
    trajectories: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct Demo3Config {
    common: Common,
    beta: f64,
    steps: usize,
    trajectories: u64,
}

impl Default for Demo3Config {
    fn default() -> Self {
        Self {
            common: Common::named("demo3"),
            beta: 0.025,
            steps: 100,
            trajectories: 10_000,
        }
    }
}

impl RunConfig for Demo3Config {
    const NAME: &'static str = "demo3";
    fn common(&self) -> &Common {
        &self.common
    }
    fn validate(&self) -> CliResult<()> {
        check_probability("beta", self.beta)?;
        check_positive("steps", self.steps as f64)?;
        check_positive("trajectories", self.trajectories as f64)
    }
}

fn check_probability(name: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(usage(format!("--{name} must lie in [0, 1], got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn demo3(c: &Demo3Config) -> CliResult<bool> {
    let out = &c.common.out;
    let n = 3;
    let labels: Vec<String> = (0..1 << n).map(|i| format!("p_{}", state_label(i, n))).collect();
    let header = || {
        std::iter::once("t".to_string())
            .chain(labels.iter().cloned())
            .chain(["entropy".to_string()])
    };

    let sweep = forward_sweep(&fixture_distribution(), c.beta, c.steps)?;
    let mut w = csv_writer(out, "forward.csv")?;
    w.write_record(header())?;
    for (t, p) in sweep.iter().enumerate() {
        w.write_record(
            std::iter::once(t.to_string())
                .chain(p.probs().iter().map(|&v| num(v)))
                .chain([num(p.entropy())]),
        )?;
    }
    w.flush()?;

    let sampler = ReverseSampler::new(&fixture_distribution(), FlipSchedule::new(c.beta, c.steps)?)?;
    let counts = sampler.ensemble_counts(c.trajectories, derive_seed(c.common.seed, "demo3-reverse"))?;
    let mut w = csv_writer(out, "reverse.csv")?;
    w.write_record(header())?;
    let mut terminal = None;
    for (k, row) in counts.iter().enumerate() {
        let p = ProbabilityTable::from_counts(n, row)?;
        w.write_record(
            std::iter::once((c.steps - k).to_string())
                .chain(p.probs().iter().map(|&v| num(v)))
                .chain([num(p.entropy())]),
        )?;
        terminal = Some(p);
    }
    w.flush()?;

    let mut w = csv_writer(out, "flip_table.csv")?;
    w.write_record(["distance", "probability"])?;
    for d in 0..=n {
        w.write_record([d.to_string(), num(distance_class_prob(n, d, c.beta)?)])?;
    }
    w.flush()?;

    let first = sweep.first().map_or(0.0, ProbabilityTable::entropy);
    let last = sweep.last().map_or(0.0, ProbabilityTable::entropy);
    println!("forward entropy {first:.4} -> {last:.4} nats over {} steps", c.steps);
    if let Some(p) = terminal {
        let cheese = p.prob(&BitMask::new(vec![1, 1, 1])?);
        let plain = p.prob(&BitMask::new(vec![1, 1, 0])?);
        println!(
            "reverse terminal: cheeseburger {cheese:.4}, hamburger {plain:.4}, other {:.4}",
            1.0 - cheese - plain
        );
    }
    Ok(true)
}

// demo3-continuous

#[derive(Args, Debug, Serialize)]
struct Demo3ContinuousFlags {
    /// Constant diffusion rate.
    #[arg(long)]
    beta: Option<f64>,
    /// Euler-Maruyama steps over the unit time horizon.
    #[arg(long)]
    steps: Option<usize>,
    /// Reverse trajectories in the sampled ensemble.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Trajectories written in full to the track files.
    #[arg(long)]
    tracked: Option<usize>,
    /// Histogram bins for the cheese-coordinate entropy.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct Demo3ContinuousConfig {
    common: Common,
    beta: f64,
    total_time: f64,
    steps: usize,
    trajectories: usize,
    tracked: usize,
    bins: usize,
    range_lo: f64,
    range_hi: f64,
}

impl Default for Demo3ContinuousConfig {
    fn default() -> Self {
        Self {
            common: Common::named("demo3-continuous"),
            beta: 5.0,
            total_time: 1.0,
            steps: 100,
            trajectories: 10_000,
            tracked: 5,
            bins: 60,
            range_lo: -3.0,
            range_hi: 3.0,
        }
    }
}

impl RunConfig for Demo3ContinuousConfig {
    const NAME: &'static str = "demo3-continuous";
    fn common(&self) -> &Common {
        &self.common
    }
    fn validate(&self) -> CliResult<()> {
        check_positive("beta", self.beta)?;
        check_positive("total_time", self.total_time)?;
        check_positive("steps", self.steps as f64)?;
        check_positive("trajectories", self.trajectories as f64)?;
        if self.bins < 2 || !(self.range_lo < self.range_hi) {
            return Err(usage("--bins must be at least 2 and range_lo < range_hi"));
        }
        Ok(())
    }
}

fn demo3_continuous(c: &Demo3ContinuousConfig) -> CliResult<bool> {
    let out = &c.common.out;
    let schedule = NoiseSchedule::constant(c.beta, c.total_time, c.steps)?;
    let cloud = fixture_cloud();
    let fixture = three_ingredient_fixture();
    let norm = fixture.normalization.as_ref().expect("fixture is normalized");
    let names: Vec<String> = fixture.vocabulary.names().map(|s| format!("w_{s}")).collect();

    let fseed = derive_seed(c.common.seed, "continuous-forward");
    let forward: Vec<Vec<Vec<f64>>> = (0..c.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(fseed, i as u64);
            let k = rng.gen_range(0..cloud.len());
            forward_trajectory_with(&cloud.points()[k], &schedule, &mut rng)
        })
        .collect();
    let rseed = derive_seed(c.common.seed, "continuous-reverse");
    let reverse: Vec<Vec<Vec<f64>>> = (0..c.trajectories)
        .into_par_iter()
        .map(|i| reverse_trajectory_rng(&schedule, &cloud, &mut stream(rseed, i as u64), ReverseInit::FromPt))
        .collect::<Result<_>>()?;

    for (file, paths, forward_time) in [
        ("forward_tracks.csv", &forward, true),
        ("reverse_tracks.csv", &reverse, false),
    ] {
        let mut w = csv_writer(out, file)?;
        w.write_record(
            ["trajectory".to_string(), "t".to_string()]
                .into_iter()
                .chain(names.iter().cloned()),
        )?;
        for (i, path) in paths.iter().take(c.tracked).enumerate() {
            for (k, state) in path.iter().enumerate() {
                let t = if forward_time {
                    schedule.time(k)
                } else {
                    schedule.time(c.steps - k)
                };
                w.write_record([i.to_string(), num(t)].into_iter().chain(state.iter().map(|&v| num(v))))?;
            }
        }
        w.flush()?;
    }

    let cheese = cloud.dim() - 1;
    let range = (c.range_lo, c.range_hi);
    let mut w = csv_writer(out, "entropy.csv")?;
    w.write_record(["t", "forward_cheese_entropy", "reverse_cheese_entropy"])?;
    for k in 0..=c.steps {
        let f: Vec<f64> = forward.iter().map(|p| p[k][cheese]).collect();
        let r: Vec<f64> = reverse.iter().map(|p| p[c.steps - k][cheese]).collect();
        w.write_record([
            num(schedule.time(k)),
            num(histogram_entropy(&f, c.bins, range)?),
            num(histogram_entropy(&r, c.bins, range)?),
        ])?;
    }
    w.flush()?;

    let modes: Vec<Vec<f64>> = fixture.recipes.iter().map(|r| r.weights_grams.clone()).collect();
    let mut hits = vec![0usize; modes.len()];
    for path in &reverse {
        let g = norm.to_grams(path.last().expect("non-empty path"));
        for (m, mode) in modes.iter().enumerate() {
            if g.iter()
                .zip(mode)
                .zip(BURGER_TOLERANCE_GRAMS)
                .all(|((x, y), tol)| (x - y).abs() <= tol)
            {
                hits[m] += 1;
            }
        }
    }
    for (r, h) in fixture.recipes.iter().zip(&hits) {
        println!(
            "reverse endpoints in the {} box: {:.4}",
            r.name,
            *h as f64 / c.trajectories as f64
        );
    }
    Ok(true)
}

// discover

#[derive(Args, Debug, Serialize)]
struct DiscoverFlags {
    /// discrete (hypercube) or continuous (weight space).
    #[arg(long)]
    mode: Option<String>,
    /// Flip probability per step (discrete) or constant diffusion rate (continuous).
    #[arg(long)]
    beta: Option<f64>,
    /// Diffusion steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Independent forward trajectories per target.
    #[arg(long)]
    trials: Option<u64>,
    /// JSON array of targets: {"name", "mask"} or {"name", "grams", "tolerance"}.
    #[arg(long, value_name = "FILE")]
    targets: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DiscoverMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct DiscoverConfig {
    common: Common,
    mode: DiscoverMode,
    beta: f64,
    total_time: f64,
    steps: usize,
    trials: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    targets: Option<PathBuf>,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        Self {
            common: Common::named("discover"),
            mode: DiscoverMode::Continuous,
            beta: 0.10,
            total_time: 1.0,
            steps: 100,
            trials: 1_000_000,
            targets: None,
        }
    }
}

impl RunConfig for DiscoverConfig {
    const NAME: &'static str = "discover";
    fn common(&self) -> &Common {
        &self.common
    }
    fn validate(&self) -> CliResult<()> {
        if self.mode == DiscoverMode::Discrete {
            check_probability("beta", self.beta)?;
        } else {
            check_positive("beta", self.beta)?;
        }
        check_positive("steps", self.steps as f64)?;
        check_positive("trials", self.trials as f64)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    name: String,
    mask: Option<Vec<u8>>,
    grams: Option<Vec<f64>>,
    tolerance: Option<Vec<f64>>,
}

fn read_targets(path: &Path) -> CliResult<Vec<DiscoveryTarget>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read targets {}: {e}", path.display())))?;
    let entries: Vec<TargetEntry> =
        serde_json::from_str(&text).map_err(|e| usage(format!("targets {}: {e}", path.display())))?;
    entries
        .into_iter()
        .map(|e| match (e.mask, e.grams) {
            (Some(m), None) => Ok(DiscoveryTarget::mask(e.name, BitMask::new(m)?)),
            (None, Some(g)) => {
                let tol = e.tolerance.unwrap_or_else(|| g.iter().map(|v| 0.2 * v).collect());
                Ok(DiscoveryTarget::grams(e.name, g, tol)?)
            }
            _ => Err(usage(format!(
                "target '{}' needs exactly one of \"mask\" or \"grams\"",
                e.name
            ))),
        })
        .collect()
}

fn discover(c: &DiscoverConfig) -> CliResult<bool> {
    let fixture = three_ingredient_fixture();
    let norm = fixture.normalization.as_ref().expect("fixture is normalized");
    let cloud = fixture_cloud();
    let targets = match &c.targets {
        Some(p) => read_targets(p)?,
        None => match c.mode {
            DiscoverMode::Continuous => burger_targets(),
            DiscoverMode::Discrete => (0..8)
                .map(|i| DiscoveryTarget::mask(state_label(i, 3), BitMask::from_index(i, 3)))
                .collect(),
        },
    };
    let seed = derive_seed(c.common.seed, "discover");
    let (reports, distances): (Vec<DiscoveryReport>, Vec<f64>) = match c.mode {
        DiscoverMode::Continuous => {
            let schedule = NoiseSchedule::constant(c.beta, c.total_time, c.steps)?;
            if targets.iter().any(|t| matches!(t.state, TargetState::Mask(_))) {
                return Err(usage("continuous discovery needs gram targets"));
            }
            let reports = continuous_discovery_many(&cloud, norm, &targets, &schedule, c.trials, seed)?;
            let d = targets
                .iter()
                .map(|t| match &t.state {
                    TargetState::Grams { grams, .. } => distance_to_manifold(&norm.from_grams(grams), &cloud),
                    TargetState::Mask(_) => unreachable!("checked above"),
                })
                .collect::<Result<_>>()?;
            (reports, d)
        }
        DiscoverMode::Discrete => {
            let masks = targets
                .iter()
                .map(|t| match &t.state {
                    TargetState::Mask(m) => Ok(m.clone()),
                    TargetState::Grams { .. } => Err(usage("discrete discovery needs mask targets")),
                })
                .collect::<CliResult<Vec<_>>>()?;
            let p0 = fixture_distribution();
            let reports = discrete_discovery_many(&p0, &masks, &FlipSchedule::new(c.beta, c.steps)?, c.trials, seed)?;
            let training = fixture.masks();
            let d = masks
                .iter()
                .map(|m| {
                    training
                        .iter()
                        .map(|x| crate::hamming(m, x).unwrap_or(usize::MAX))
                        .min()
                        .unwrap_or(0) as f64
                })
                .collect();
            (reports, d)
        }
    };

    let out = &c.common.out;
    let mut w = csv_writer(out, "discovery.csv")?;
    w.write_record([
        "target",
        "distance",
        "d_squared",
        "p_path",
        "ci_path",
        "n95_path",
        "p_end",
        "ci_end",
        "n95_end",
        "hits_path",
        "hits_end",
        "trials",
    ])?;
    let opt = |v: Option<u64>| v.map_or_else(String::new, |x| x.to_string());
    for ((t, r), d) in targets.iter().zip(&reports).zip(&distances) {
        w.write_record([
            t.name.clone(),
            num(*d),
            num(d * d),
            num(r.p_path),
            num(r.ci_path),
            opt(r.n95_path),
            num(r.p_end),
            num(r.ci_end),
            opt(r.n95_end),
            r.hits_path.to_string(),
            r.hits_end.to_string(),
            r.trials.to_string(),
        ])?;
        println!("{:<22} d={d:.3} p_path={:.7} p_end={:.7}", t.name, r.p_path, r.p_end);
    }
    w.flush()?;

    let mut w = csv_writer(out, "slopes.csv")?;
    w.write_record(["quantity", "slope", "intercept", "points"])?;
    for (quantity, pick) in [("path", 0), ("end", 1)] {
        let points: Vec<SlopePoint> = reports
            .iter()
            .zip(&distances)
            .filter_map(|(r, d)| {
                let n = if pick == 0 { r.n95_path } else { r.n95_end };
                n.map(|n| SlopePoint {
                    d_squared: d * d,
                    n95: n as f64,
                })
            })
            .collect();
        match slope_fit(&points) {
            Ok(fit) => {
                w.write_record([
                    quantity.to_string(),
                    num(fit.slope),
                    num(fit.intercept),
                    points.len().to_string(),
                ])?;
                println!("slope ({quantity}): {:.4}", fit.slope);
            }
            Err(e) => {
                log::warn!("no slope for {quantity}: {e}");
                w.write_record([
                    quantity.to_string(),
                    String::new(),
                    String::new(),
                    points.len().to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(true)
}

// data sources shared by training and stats

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Normalize {
    PerIngredient,
    Reference,
}

/// `fixture` and `synthetic` name the built-in datasets; anything else is a file path.
fn load_data(data: &str, format: Option<DataFormat>, normalize: Normalize) -> CliResult<Dataset> {
    match data {
        "fixture" => Ok(three_ingredient_fixture()),
        "synthetic" => Ok(synthetic_dataset(&SyntheticSpec::default())?),
        path => {
            let path = Path::new(path);
            if !path.exists() {
                return Err(usage(format!("data file {} does not exist", path.display())));
            }
            let format = resolve_format(path, format).map_err(|e| usage(e.to_string()))?;
            let mode = match normalize {
                Normalize::PerIngredient => NormalizationMode::PerIngredientStats,
                Normalize::Reference => NormalizationMode::Reference,
            };
            Ok(normalize_weights(load_dataset(path, format)?, mode)?)
        }
    }
}

fn write_loss_log(path: &Path, log: &TrainingLog) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "epoch", "train_loss", "validation_loss"])?;
    for r in &log.records {
        w.write_record([
            r.step.to_string(),
            format!("{:.4}", r.epoch),
            num(r.train_loss),
            r.validation_loss.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// train-mask

#[derive(Args, Debug, Serialize)]
struct TrainMaskFlags {
    /// Recipe file (.jsonl or .csv), or the built-in `fixture` / `synthetic`.
    #[arg(long)]
    data: Option<String>,
    /// jsonl or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Recipes per minibatch.
    #[arg(long)]
    batch: Option<usize>,
    /// Width of each hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden layers in the trunk.
    #[arg(long)]
    layers: Option<usize>,
    /// Share of recipes held out for validation loss.
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Weight-averaging decay; 0 disables averaging.
    #[arg(long)]
    ema_decay: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainMaskConfig {
    common: Common,
    data: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<DataFormat>,
    epochs: usize,
    lr: f64,
    batch: usize,
    hidden: usize,
    layers: usize,
    embed_dim: usize,
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    validation_fraction: f64,
    ema_decay: f64,
    log_every: usize,
}

impl Default for TrainMaskConfig {
    fn default() -> Self {
        Self {
            common: Common::named("train-mask"),
            data: "fixture".into(),
            format: None,
            epochs: 2000,
            lr: 5e-4,
            batch: 1000,
            hidden: 512,
            layers: 3,
            embed_dim: 32,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            validation_fraction: 0.2,
            ema_decay: 0.999,
            log_every: 100,
        }
    }
}

impl RunConfig for TrainMaskConfig {
    const NAME: &'static str = "train-mask";
    fn common(&self) -> &Common {
        &self.common
    }
}

fn train_config(
    common: &Common,
    lr: f64,
    batch: usize,
    epochs: usize,
    vf: f64,
    ema: f64,
    log_every: usize,
) -> TrainConfig {
    TrainConfig {
        lr,
        batch,
        epochs,
        validation_fraction: vf,
        seed: common.seed,
        log_every,
        ema_decay: (ema > 0.0).then_some(ema),
    }
}

fn train_mask(c: &TrainMaskConfig) -> CliResult<bool> {
    let data = load_data(&c.data, c.format, Normalize::PerIngredient)?;
    let schedule = RetentionSchedule::linear(c.beta_start, c.beta_end, c.timesteps)?;
    let arch = MaskArchitecture {
        n: data.n(),
        timesteps: c.timesteps,
        embed_dim: c.embed_dim,
        hidden: vec![c.hidden; c.layers],
        activation: Activation::Relu,
    };
    let config = train_config(
        &c.common,
        c.lr,
        c.batch,
        c.epochs,
        c.validation_fraction,
        c.ema_decay,
        c.log_every,
    );
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (model, log) = train_mask_model(&data, &schedule, arch, &config)?;
    let meta = MaskCheckpointMeta {
        schedule,
        vocabulary: data.vocabulary.clone(),
        config: Some(config),
    };
    let path = c.common.out.join("mask.ckpt");
    model.save(&path, c.common.seed, &meta)?;
    write_loss_log(&c.common.out.join("loss.csv"), &log)?;
    println!("wrote {} ({} parameters)", path.display(), model.param_count());
    Ok(true)
}

// train-value

#[derive(Args, Debug, Serialize)]
struct TrainValueFlags {
    /// Recipe file (.jsonl or .csv), or the built-in `fixture` / `synthetic`.
    #[arg(long)]
    data: Option<String>,
    /// jsonl or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// per_ingredient or reference (needs reference weights; built-in fixture only).
    #[arg(long)]
    normalize: Option<String>,
    /// Passes over the training split.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Recipes per minibatch.
    #[arg(long)]
    batch: Option<usize>,
    /// Width of each hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Share of recipes held out for validation loss.
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Weight-averaging decay; 0 disables averaging.
    #[arg(long)]
    ema_decay: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainValueConfig {
    common: Common,
    data: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<DataFormat>,
    normalize: Normalize,
    epochs: usize,
    lr: f64,
    batch: usize,
    hidden: usize,
    layers: usize,
    activation: Activation,
    time_frequencies: usize,
    beta_min: f64,
    beta_max: f64,
    total_time: f64,
    steps: usize,
    validation_fraction: f64,
    ema_decay: f64,
    log_every: usize,
}

impl Default for TrainValueConfig {
    fn default() -> Self {
        Self {
            common: Common::named("train-value"),
            data: "fixture".into(),
            format: None,
            normalize: Normalize::PerIngredient,
            epochs: 2000,
            lr: 1e-3,
            batch: 400,
            hidden: 256,
            layers: 4,
            activation: Activation::Silu,
            time_frequencies: 8,
            beta_min: 0.001,
            beta_max: 3.0,
            total_time: 1.0,
            steps: 1000,
            validation_fraction: 0.2,
            ema_decay: 0.999,
            log_every: 100,
        }
    }
}

impl RunConfig for TrainValueConfig {
    const NAME: &'static str = "train-value";
    fn common(&self) -> &Common {
        &self.common
    }
}

fn train_value(c: &TrainValueConfig) -> CliResult<bool> {
    let data = load_data(&c.data, c.format, c.normalize)?;
    let schedule = NoiseSchedule::new(c.beta_min, c.beta_max, c.total_time, c.steps)?;
    let arch = ValueArchitecture {
        n: data.n(),
        hidden: vec![c.hidden; c.layers],
        activation: c.activation,
        time_frequencies: c.time_frequencies,
    };
    let config = train_config(
        &c.common,
        c.lr,
        c.batch,
        c.epochs,
        c.validation_fraction,
        c.ema_decay,
        c.log_every,
    );
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (model, log) = train_value_model(&data, &schedule, arch, &config)?;
    let meta = ValueCheckpointMeta {
        schedule,
        vocabulary: data.vocabulary.clone(),
        normalization: data
            .normalization
            .clone()
            .ok_or(Error::Internal("dataset not normalized".into()))?,
        config: Some(config),
    };
    let path = c.common.out.join("value.ckpt");
    model.save(&path, c.common.seed, &meta)?;
    write_loss_log(&c.common.out.join("loss.csv"), &log)?;
    println!("wrote {} ({} parameters)", path.display(), model.param_count());
    Ok(true)
}

// sample

#[derive(Args, Debug, Serialize)]
struct SampleFlags {
    /// Mask-model checkpoint.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Masks to draw.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SampleConfig {
    common: Common,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    count: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            common: Common::named("sample"),
            model: None,
            count: 1000,
        }
    }
}

impl RunConfig for SampleConfig {
    const NAME: &'static str = "sample";
    fn common(&self) -> &Common {
        &self.common
    }
    fn validate(&self) -> CliResult<()> {
        if self.model.is_none() {
            return Err(usage("sample needs --model <mask.ckpt>"));
        }
        check_positive("count", self.count as f64)
    }
}

fn require_file(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    let p = path.clone().ok_or_else(|| usage(format!("missing --{flag}")))?;
    if !p.exists() {
        return Err(usage(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn sample(c: &SampleConfig) -> CliResult<bool> {
    let (model, meta) = MaskModel::load(&require_file(&c.model, "model")?)?;
    let masks = sample_masks(
        &model,
        &meta.schedule,
        c.count,
        derive_seed(c.common.seed, "sample-masks"),
    )?;
    let mut out = BufWriter::new(File::create(c.common.out.join("masks.jsonl"))?);
    for m in &masks {
        let names: Vec<&str> = (0..m.len())
            .filter(|&i| m.get(i))
            .map(|i| meta.vocabulary.name(i))
            .collect();
        let line = serde_json::json!({ "mask": m.bits(), "ingredients": names });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    println!("wrote {} masks", masks.len());
    Ok(true)
}

// generate

#[derive(Args, Debug, Serialize)]
struct GenerateFlags {
    /// Mask-model checkpoint.
    #[arg(long, value_name = "FILE")]
    mask_model: Option<PathBuf>,
    /// Value-model checkpoint (same vocabulary as the mask model).
    #[arg(long, value_name = "FILE")]
    value_model: Option<PathBuf>,
    /// Recipes to generate.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    common: Common,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_model: Option<PathBuf>,
    count: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            common: Common::named("generate"),
            mask_model: None,
            value_model: None,
            count: 1000,
        }
    }
}

impl RunConfig for GenerateConfig {
    const NAME: &'static str = "generate";
    fn common(&self) -> &Common {
        &self.common
    }
    fn validate(&self) -> CliResult<()> {
        check_positive("count", self.count as f64)
    }
}

fn generate(c: &GenerateConfig) -> CliResult<bool> {
    let (mask_model, mask_meta) = MaskModel::load(&require_file(&c.mask_model, "mask-model")?)?;
    let (value_model, value_meta) = ValueModel::load(&require_file(&c.value_model, "value-model")?)?;
    if mask_meta.vocabulary.names().ne(value_meta.vocabulary.names()) {
        return Err(Error::VocabularyMismatch(
            "mask and value checkpoints were trained on different vocabularies".into(),
        )
        .into());
    }
    let masks = sample_masks(
        &mask_model,
        &mask_meta.schedule,
        c.count,
        derive_seed(c.common.seed, "generate-masks"),
    )?;
    let weights = sample_weights_batch(
        &value_model,
        &masks,
        &value_meta.schedule,
        &value_meta.normalization,
        derive_seed(c.common.seed, "generate-weights"),
    )?;
    let recipes: Vec<Recipe> = weights
        .grams
        .into_iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (g, m))| Recipe {
            name: format!("generated-{i:05}"),
            mask: m,
            weights_grams: g,
        })
        .collect();
    let mut out = BufWriter::new(File::create(c.common.out.join("recipes.jsonl"))?);
    write_jsonl(&mut out, &mask_meta.vocabulary, &recipes)?;
    out.flush()?;
    println!(
        "wrote {} recipes; clamped {} negative weights",
        recipes.len(),
        weights.clamped
    );
    Ok(true)
}

// stats

#[derive(Args, Debug, Serialize)]
struct StatsFlags {
    /// Training recipes (file, `fixture` or `synthetic`).
    #[arg(long)]
    data: Option<String>,
    /// Generated recipes in the same file format.
    #[arg(long, value_name = "FILE")]
    generated: Option<PathBuf>,
    /// jsonl or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Ingredients by total weight whose mean weights are compared.
    #[arg(long)]
    weight_top: Option<usize>,
    /// Most frequent ingredients whose pairwise correlations enter the agreement score.
    #[arg(long)]
    corr_top: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct StatsConfig {
    common: Common,
    data: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<DataFormat>,
    weight_top: usize,
    weight_min_presence: f64,
    corr_top: usize,
    rare: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        let o = CompareOptions::default();
        Self {
            common: Common::named("stats"),
            data: "fixture".into(),
            generated: None,
            format: None,
            weight_top: o.weight_top.unwrap_or(10),
            weight_min_presence: o.weight_min_presence,
            corr_top: o.corr_top,
            rare: o.rare,
        }
    }
}

impl RunConfig for StatsConfig {
    const NAME: &'static str = "stats";
    fn common(&self) -> &Common {
        &self.common
    }
}

fn stats(c: &StatsConfig) -> CliResult<bool> {
    let train = load_data(&c.data, c.format, Normalize::PerIngredient)?;
    let path = require_file(&c.generated, "generated")?;
    let format = resolve_format(&path, c.format).map_err(|e| usage(e.to_string()))?;
    let generated = load_recipes_in(&path, format, &train.vocabulary)?;
    let ts = summarize(&train.recipes)?;
    let gs = summarize(&generated)?;
    let options = CompareOptions {
        corr_top: c.corr_top,
        weight_top: Some(c.weight_top),
        weight_min_presence: c.weight_min_presence,
        rare: c.rare,
    };
    let report = compare_with(&ts, &gs, &options)?;
    let names: Vec<String> = train.vocabulary.names().map(String::from).collect();
    write_outputs(&c.common.out, &names, &ts, &gs, &report)?;
    println!(
        "max marginal gap {:.4}; correlation agreement r = {}; max mean-weight error {}",
        report.max_marginal_gap,
        report.corr_r.map_or("undefined".into(), |r| format!("{r:.4}")),
        report.max_weight_error.map_or("n/a".into(), |e| format!("{e:.4}")),
    );
    Ok(true)
}

// verify

#[derive(Args, Debug, Serialize)]
struct VerifyFlags {
    /// Random evaluation points for the score check.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct VerifyConfig {
    common: Common,
    points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            common: Common::named("verify"),
            points: 100,
        }
    }
}

impl RunConfig for VerifyConfig {
    const NAME: &'static str = "verify";
    fn common(&self) -> &Common {
        &self.common
    }
}

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

fn verify(c: &VerifyConfig) -> CliResult<bool> {
    let mut rng = stream(derive_seed(c.common.seed, "verify"), 0);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for n in 1..=6 {
        for &beta in &[0.01, 0.025, 0.1, 0.3] {
            let x0 = BitMask::from_index(rng.gen_range(0..1 << n), n);
            let mut p = ProbabilityTable::delta(&x0)?;
            for t in 1..=200 {
                p = evolve(&p, beta)?;
                if t % 20 == 0 {
                    let exact = closed_form_marginal(&x0, t, beta)?;
                    for (a, b) in p.probs().iter().zip(exact.probs()) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
    }
    checks.push(Check {
        name: "closed-form marginal vs iterated kernel (max abs diff)",
        value: worst,
        tolerance: 1e-12,
    });

    let table = [0.92686, 0.07130, 0.00183, 0.00002];
    let flip = (0..4)
        .map(|d| distance_class_prob(3, d, 0.025).map(|p| (p - table[d]).abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "flip table at beta=0.025 (max abs diff)",
        value: flip,
        tolerance: 5e-6,
    });

    let schedule = NoiseSchedule::new(0.001, 3.0, 1.0, 1000)?;
    let mut vp: f64 = 0.0;
    for k in 0..=100 {
        let m = ou_moments(&schedule, k as f64 / 100.0)?;
        vp = vp.max((m.sigma - (1.0 - m.mu * m.mu)).abs());
    }
    checks.push(Check {
        name: "variance-preserving identity sigma = 1 - mu^2",
        value: vp,
        tolerance: 1e-12,
    });

    let mut score_err: f64 = 0.0;
    for i in 0..c.points {
        let n = [1, 3, 5][i % 3];
        let cloud = TrainingCloud::new(
            (0..1 + rng.gen_range(0..4))
                .map(|_| (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect(),
        )?;
        let t = rng.gen_range(0.05..1.0);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = mixture_score(&w, t, &schedule, &cloud)?;
        let h = 1e-5;
        for d in 0..n {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[d] += h;
            dn[d] -= h;
            let fd = (mixture_log_density(&up, t, &schedule, &cloud)?
                - mixture_log_density(&dn, t, &schedule, &cloud)?)
                / (2.0 * h);
            score_err = score_err.max((s[d] - fd).abs() / s[d].abs().max(1.0));
        }
    }
    checks.push(Check {
        name: "mixture score vs finite differences (max rel err)",
        value: score_err,
        tolerance: 1e-4,
    });

    checks.push(Check {
        name: "MLP backward vs finite differences (max rel err)",
        value: mlp_gradient_error(&mut rng)?,
        tolerance: 1e-4,
    });

    let mut w = csv_writer(&c.common.out, "verify.csv")?;
    w.write_record(["check", "value", "tolerance", "pass"])?;
    let mut all = true;
    for ch in &checks {
        let pass = ch.value <= ch.tolerance;
        all &= pass;
        println!(
            "{} {}: {:.3e} (tolerance {:.0e})",
            if pass { "PASS" } else { "FAIL" },
            ch.name,
            ch.value,
            ch.tolerance
        );
        w.write_record([
            ch.name.to_string(),
            format!("{:e}", ch.value),
            format!("{:e}", ch.tolerance),
            pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(all)
}

/// log p_t(w) of the Gaussian mixture, written out directly.
fn mixture_log_density(w: &[f64], t: f64, schedule: &NoiseSchedule, cloud: &TrainingCloud) -> Result<f64> {
    let m = ou_moments(schedule, t)?;
    let n = w.len() as f64;
    let logs: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| -w.iter().zip(p).map(|(a, b)| (a - m.mu * b).powi(2)).sum::<f64>() / (2.0 * m.sigma))
        .collect();
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - (cloud.len() as f64).ln() - 0.5 * n * (2.0 * std::f64::consts::PI * m.sigma).ln())
}

fn mlp_gradient_error<R: Rng>(rng: &mut R) -> Result<f64> {
    let spec = MlpSpec {
        input: 5,
        hidden: vec![7, 6],
        output: 3,
        activation: Activation::Silu,
    };
    let mlp = Mlp::<f64>::he_uniform(spec, rng)?;
    let x = ndarray::Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
    let dy = ndarray::Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
    let objective = |m: &Mlp<f64>| -> Result<f64> { Ok((&m.forward(x.view())? * &dy).sum()) };
    let (_, tape) = mlp.forward_recorded(x.view())?;
    let (grads, _) = mlp.backward(&tape, dy.view())?;
    let flat = mlp.to_flat();
    let g = grads.to_flat();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = mlp.clone();
        let mut v = flat.clone();
        v[i] += h;
        p.load_flat(&v)?;
        let up = objective(&p)?;
        v[i] -= 2.0 * h;
        p.load_flat(&v)?;
        let dn = objective(&p)?;
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1e-3));
    }
    Ok(worst)
}
