//! Config-driven driver behind the `ppfl` binary.
//!
//! Every subcommand reads one JSON document, applies `--seed` and
//! `--set key=value` overrides, deserializes with field-path error
//! reporting and then calls straight into `ppfl-core`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use ppfl_core::baselines;
use ppfl_core::datagen::{self, BenchmarkSpec};
use ppfl_core::fedsim::{self, ClientShard};
use ppfl_core::metrics::export_run;
use ppfl_core::optim::estimate_smoothness;
use ppfl_core::{AffinityGraph, Algorithm, PpflError, RngStream, RunConfig};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "PPFL_THREADS";

/// Optional affinity matrix picked up from a benchmark directory.
pub const AFFINITY_FILE: &str = "affinity.csv";

#[derive(Debug, Parser)]
#[command(name = "ppfl", version, about = "Population-personalized federated learning experiments")]
pub struct Cli {
    /// Worker threads; falls back to PPFL_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic federated benchmark directory.
    Generate(GenerateArgs),
    /// Train one configuration on a benchmark directory.
    Train(TrainArgs),
    /// Run the cartesian product of a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides one config field, e.g. `--set lambda=0.01` or
    /// `--set eta.eta=0.005`. Values are parsed as JSON, falling back to a
    /// plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Benchmark directory shared by all points. Without it the sweep
    /// generates data from its `benchmark` section.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Applied to the `base` run config.
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    StepBound(String),
    #[error("{failed} of {total} sweep points failed")]
    SweepPartial { failed: usize, total: usize },
    #[error(transparent)]
    Run(PpflError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::StepBound(_) => 3,
            CliError::SweepPartial { .. } | CliError::Run(_) => 1,
        }
    }
}

impl From<PpflError> for CliError {
    fn from(e: PpflError) -> Self {
        match e {
            PpflError::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

/// Thread count from the flag, then the environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{THREADS_ENV}: expected a thread count, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a).map(|_| ()),
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Sets the dotted `key` inside `doc`, creating intermediate objects.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {assignment:?}: expected KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set {assignment:?}: empty key segment")));
    }
    let mut node = doc;
    for (depth, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("--set: `{}` is not an object", parts[..depth].join(".")))
        })?;
        if depth + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn apply_overrides(doc: &mut Value, o: &Overrides) -> Result<(), CliError> {
    if !doc.is_object() {
        return Err(CliError::Config("top level must be a JSON object".into()));
    }
    if let Some(seed) = o.seed {
        doc["seed"] = Value::from(seed);
    }
    for s in &o.set {
        apply_set(doc, s)?;
    }
    Ok(())
}

/// Deserializes `doc`, naming the offending field path on failure.
pub fn from_value<T: DeserializeOwned>(doc: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(inner.to_string())
        } else {
            CliError::Config(format!("{path}: {inner}"))
        }
    })
}

/// Parses a run config. The command line enforces the step-size bound
/// unless the document sets `enforce_step_bound` itself.
pub fn run_config_from(mut doc: Value) -> Result<RunConfig, CliError> {
    if let Some(obj) = doc.as_object_mut() {
        obj.entry("enforce_step_bound").or_insert(Value::Bool(true));
    }
    let cfg: RunConfig = from_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Document read by `ppfl generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default)]
    pub seed: u64,
    pub benchmark: BenchmarkSpec,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut doc = read_json(&args.config)?;
    apply_overrides(&mut doc, &args.overrides)?;
    let gc: GenerateConfig = from_value(doc)?;
    let bench = gc
        .benchmark
        .generate(&RngStream::root(gc.seed))
        .map_err(config_or_run)?;
    datagen::export_benchmark(&bench, Some(&gc.benchmark), Some(gc.seed), &args.out)?;
    info!(
        "wrote {} clients to {}",
        bench.shards.len(),
        args.out.display()
    );
    Ok(())
}

/// Generator argument errors are configuration errors.
fn config_or_run(e: PpflError) -> CliError {
    match e {
        PpflError::InvalidArgument(msg) => CliError::Config(msg),
        other => other.into(),
    }
}

/// Affinity for a benchmark directory: `affinity.csv` when present, the
/// federation default otherwise.
pub fn load_affinity(data: &Path, shards: &[ClientShard]) -> Result<AffinityGraph, CliError> {
    let path = data.join(AFFINITY_FILE);
    if path.exists() {
        Ok(AffinityGraph::from_csv(&path)?)
    } else {
        Ok(fedsim::default_affinity(shards)?)
    }
}

/// Runs `cfg` and writes the run directory. Step-size rejections are
/// reported with the bound's ingredients.
pub fn train_and_export(
    cfg: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    out: &Path,
) -> Result<(), CliError> {
    let traj = baselines::run(cfg, shards, graph).map_err(|e| match e {
        PpflError::StepSize { eta, bound } => step_bound_error(cfg, shards, graph, eta, bound),
        other => other.into(),
    })?;
    export_run(&traj, out)?;
    Ok(())
}

fn step_bound_error(
    cfg: &RunConfig,
    shards: &[ClientShard],
    graph: &AffinityGraph,
    eta: f64,
    bound: f64,
) -> CliError {
    let single = matches!(cfg.algorithm, Algorithm::Fedavg | Algorithm::Local | Algorithm::ClusteredFl);
    let eff = if single {
        RunConfig {
            k: 1,
            rho: [1.0, 0.0],
            lambda: 0.0,
            ..cfg.clone()
        }
    } else {
        cfg.clone()
    };
    let formula = match (cfg.algorithm, single) {
        (Algorithm::Alternating, _) => "min{1/(16 L1), 1/(s L2)}",
        (_, true) => "1/(32 E L1)",
        _ => "min{1/(32 E L1), 2/(s L2)}",
    };
    let detail = baselines::initial_state(&eff, shards)
        .and_then(|init| estimate_smoothness(shards, graph, &eff, &init.theta))
        .map(|s| {
            format!(
                " (E = {}, s = {}, L1 = {:.6e}, L2 = {:.6e})",
                cfg.local_steps, cfg.c_step_scale, s.l1, s.l2
            )
        })
        .unwrap_or_default();
    CliError::StepBound(format!(
        "step size eta = {eta} exceeds the bound {formula} = {bound:.6e}{detail}"
    ))
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut doc = read_json(&args.config)?;
    apply_overrides(&mut doc, &args.overrides)?;
    let cfg = run_config_from(doc)?;
    let (bench, _) = datagen::import_benchmark(&args.data)?;
    let graph = load_affinity(&args.data, &bench.shards)?;
    train_and_export(&cfg, &bench.shards, &graph, &args.out)?;
    info!("run written to {}", args.out.display());
    Ok(cfg)
}

/// Axes of a sweep. Absent axes keep the base value; an empty axis empties
/// the product, as does a grid with no axes at all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lambda: Option<Vec<f64>>,
    pub k: Option<Vec<usize>>,
    /// Dirichlet concentration of the generated data.
    pub alpha: Option<Vec<f64>>,
    pub algorithm: Option<Vec<Algorithm>>,
    pub seed: Option<Vec<u64>>,
}

/// Document read by `ppfl sweep`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Run config shared by every point.
    pub base: Value,
    /// Data generator used when no `--data` directory is given.
    #[serde(default)]
    pub benchmark: Option<GenerateConfig>,
    #[serde(default)]
    pub grid: Grid,
}

/// One grid point; only swept fields are present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Grid {
    fn is_unset(&self) -> bool {
        self.lambda.is_none()
            && self.k.is_none()
            && self.alpha.is_none()
            && self.algorithm.is_none()
            && self.seed.is_none()
    }

    /// Cartesian product in axis order lambda, k, alpha, algorithm, seed,
    /// the last axis varying fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        if self.is_unset() {
            return Vec::new();
        }
        fn axis<T: Copy>(
            pts: Vec<GridPoint>,
            vals: &Option<Vec<T>>,
            set: impl Fn(&mut GridPoint, T),
        ) -> Vec<GridPoint> {
            let Some(vals) = vals else { return pts };
            pts.into_iter()
                .flat_map(|p| {
                    vals.iter().map(|&v| {
                        let mut q = p.clone();
                        set(&mut q, v);
                        q
                    }).collect::<Vec<_>>()
                })
                .collect()
        }
        let mut pts = vec![GridPoint::default()];
        pts = axis(pts, &self.lambda, |p, v| p.lambda = Some(v));
        pts = axis(pts, &self.k, |p, v| p.k = Some(v));
        pts = axis(pts, &self.alpha, |p, v| p.alpha = Some(v));
        pts = axis(pts, &self.algorithm, |p, v| p.algorithm = Some(v));
        pts = axis(pts, &self.seed, |p, v| p.seed = Some(v));
        pts
    }
}

/// One `index.json` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: usize,
    pub dir: String,
    pub params: GridPoint,
    pub status: PointStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub points: Vec<IndexEntry>,
}

fn with_alpha(spec: &BenchmarkSpec, alpha: f64) -> Result<BenchmarkSpec, CliError> {
    let mut spec = spec.clone();
    match &mut spec {
        BenchmarkSpec::Mixture(s) => s.dirichlet_alpha = alpha,
        BenchmarkSpec::Dirichlet(s) => s.alpha = alpha,
        BenchmarkSpec::Domain(_) => {
            return Err(CliError::Config(
                "grid.alpha: the domain generator has no Dirichlet concentration".into(),
            ))
        }
    }
    Ok(spec)
}

enum SweepData {
    Fixed(Vec<ClientShard>, AffinityGraph),
    Generated(GenerateConfig),
}

fn point_config(base: &Value, p: &GridPoint) -> Result<RunConfig, CliError> {
    let mut doc = base.clone();
    if let Some(v) = p.lambda {
        doc["lambda"] = Value::from(v);
    }
    if let Some(v) = p.k {
        doc["k"] = Value::from(v);
    }
    if let Some(v) = p.algorithm {
        doc["algorithm"] = serde_json::to_value(v).map_err(PpflError::from)?;
    }
    if let Some(v) = p.seed {
        doc["seed"] = Value::from(v);
    }
    run_config_from(doc)
}

fn run_point(base: &Value, data: &SweepData, p: &GridPoint, out: &Path) -> Result<(), CliError> {
    let cfg = point_config(base, p)?;
    match data {
        SweepData::Fixed(shards, graph) => train_and_export(&cfg, shards, graph, out),
        SweepData::Generated(gc) => {
            let spec = match p.alpha {
                Some(a) => with_alpha(&gc.benchmark, a)?,
                None => gc.benchmark.clone(),
            };
            let bench = spec.generate(&RngStream::root(gc.seed)).map_err(config_or_run)?;
            let graph = fedsim::default_affinity(&bench.shards)?;
            train_and_export(&cfg, &bench.shards, &graph, out)
        }
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepIndex, CliError> {
    let doc = read_json(&args.config)?;
    let mut sc: SweepConfig = from_value(doc)?;
    apply_overrides(&mut sc.base, &args.overrides)
        .map_err(|e| CliError::Config(format!("base: {e}")))?;
    // the shared part must already be a complete config
    run_config_from(sc.base.clone()).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("base: {m}")),
        other => other,
    })?;
    let points = sc.grid.points();
    let data = match (&args.data, sc.benchmark) {
        (Some(_), _) if sc.grid.alpha.is_some() => {
            return Err(CliError::Config(
                "grid.alpha needs generated data; drop --data and add a benchmark section".into(),
            ))
        }
        (Some(dir), _) => {
            let (bench, _) = datagen::import_benchmark(dir)?;
            let graph = load_affinity(dir, &bench.shards)?;
            SweepData::Fixed(bench.shards, graph)
        }
        (None, Some(gc)) => {
            if sc.grid.alpha.is_some() {
                with_alpha(&gc.benchmark, 1.0)?;
            }
            SweepData::Generated(gc)
        }
        (None, None) if points.is_empty() => SweepData::Fixed(Vec::new(), AffinityGraph::empty(0)),
        (None, None) => {
            return Err(CliError::Config(
                "benchmark: required when --data is not given".into(),
            ))
        }
    };

    fs::create_dir_all(&args.out)?;
    let entries: Vec<IndexEntry> = points
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let dir = format!("point_{index:04}");
            let result = run_point(&sc.base, &data, p, &args.out.join(&dir));
            if let Err(e) = &result {
                warn!("sweep point {index} failed: {e}");
            }
            IndexEntry {
                index,
                dir,
                params: p.clone(),
                status: if result.is_ok() { PointStatus::Ok } else { PointStatus::Failed },
                error: result.err().map(|e| e.to_string()),
            }
        })
        .collect();
    let index = SweepIndex { points: entries };
    let text = serde_json::to_string_pretty(&index).map_err(PpflError::from)?;
    fs::write(args.out.join("index.json"), text)?;
    let failed = index
        .points
        .iter()
        .filter(|e| e.status == PointStatus::Failed)
        .count();
    if failed > 0 {
        return Err(CliError::SweepPartial {
            failed,
            total: index.points.len(),
        });
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_creates_nested_keys_and_parses_json() {
        let mut doc = json!({"k": 2});
        apply_set(&mut doc, "eta.eta=0.5").unwrap();
        apply_set(&mut doc, "algorithm=rbcd").unwrap();
        apply_set(&mut doc, "rho=[1,0]").unwrap();
        assert_eq!(doc, json!({"k": 2, "eta": {"eta": 0.5}, "algorithm": "rbcd", "rho": [1, 0]}));
    }

    #[test]
    fn set_rejects_malformed_assignments() {
        let mut doc = json!({"k": 2});
        assert!(apply_set(&mut doc, "k").is_err());
        assert!(apply_set(&mut doc, "k.x=1").is_err());
        assert!(apply_set(&mut doc, ".x=1").is_err());
    }

    #[test]
    fn missing_field_is_named() {
        let doc = json!({"algorithm": "rbcd", "rounds": 3, "local_steps": 1, "eta": {"kind": "constant", "eta": 0.1}});
        let err = run_config_from(doc).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`k`"), "{err}");
    }

    #[test]
    fn nested_type_error_reports_path() {
        let doc = json!({"algorithm": "rbcd", "k": 2, "rounds": 3, "local_steps": 1,
            "eta": {"kind": "constant", "eta": 0.1}, "theory": {"delta_f": "big"}});
        let err = run_config_from(doc).unwrap_err();
        assert!(err.to_string().contains("theory.delta_f"), "{err}");
        let doc = json!({"algorithm": "rbcd", "k": 2, "rounds": 3, "local_steps": 1, "eta": {"kind": "constant", "eta": "fast"}});
        let err = run_config_from(doc).unwrap_err();
        assert!(err.to_string().contains("eta: "), "{err}");
    }

    #[test]
    fn cli_enforces_bound_unless_told_otherwise() {
        let doc = json!({"algorithm": "rbcd", "k": 2, "rounds": 3, "local_steps": 1, "eta": {"kind": "constant", "eta": 0.1}});
        assert!(run_config_from(doc.clone()).unwrap().enforce_step_bound);
        let mut off = doc;
        off["enforce_step_bound"] = json!(false);
        assert!(!run_config_from(off).unwrap().enforce_step_bound);
    }

    #[test]
    fn grid_product_counts() {
        let g = Grid {
            lambda: Some(vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1]),
            k: Some(vec![1, 2, 3, 4]),
            ..Grid::default()
        };
        let pts = g.points();
        assert_eq!(pts.len(), 20);
        assert_eq!(pts[0].lambda, Some(1e-5));
        assert_eq!(pts[1].k, Some(2));
        assert_eq!(pts[4].lambda, Some(1e-4));
    }

    #[test]
    fn empty_grids_have_no_points() {
        assert!(Grid::default().points().is_empty());
        let g = Grid {
            lambda: Some(vec![0.1]),
            seed: Some(vec![]),
            ..Grid::default()
        };
        assert!(g.points().is_empty());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::StepBound("x".into()).exit_code(), 3);
        assert_eq!(CliError::SweepPartial { failed: 1, total: 2 }.exit_code(), 1);
    }
}
