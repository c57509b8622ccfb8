//! `jacnuc` command-line front end.
//!
//! Every run subcommand resolves one JSON configuration (a `--config` file or
//! the flags, then `--set key=value` overrides), parses it strictly, runs the
//! experiment and writes the run directory. Exit codes: 0 success, 2 invalid
//! configuration, 3 numerical failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use jacnuc::experiments::{
    run_matrix_equiv, run_rof, run_shrinkage, run_synthetic_denoise, DenoiseConfig, ExperimentReport, ManifoldKind,
    ManifoldSpec, MatrixEquivConfig, RofConfig, RofVariant, ShrinkageConfig,
};
use jacnuc::regularizers::frob_norm_estimate;
use jacnuc::rng::{stream, Stream};
use jacnuc::{Error, Tensor};

#[derive(Parser)]
#[command(name = "jacnuc", version, about = "Jacobian nuclear-norm regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nuclear-norm ROF problem on the unit-ball indicator.
    Rof(RofArgs),
    /// Closed form vs factorized vs subgradient solutions of the matrix problem.
    MatrixEquiv(MatrixArgs),
    /// Optimal linear shrinker on a noisy low-rank matrix.
    Shrinkage(ShrinkageArgs),
    /// Denoisers trained on noisy manifold samples.
    Denoise(DenoiseArgs),
    /// Monte Carlo estimate of a Jacobian's squared Frobenius norm.
    EstimateFrob(FrobArgs),
    /// Runs the oracle suite and prints a pass/fail table.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file; flags and --set override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty run directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `key=value`; nested keys use dots, values parse as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RofArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// exact_penalty, split_penalty or hutchinson.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
}

#[derive(Args)]
struct ShrinkageArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[command(flatten)]
    run: RunArgs,
    /// circle, swiss_roll or sphere.
    #[arg(long)]
    manifold: Option<String>,
    #[arg(long)]
    ambient_dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum TestFn {
    Sin,
    Cos,
    Square,
    Identity,
}

#[derive(Args)]
struct FrobArgs {
    #[arg(long = "fn", value_enum)]
    function: TestFn,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation point as comma-separated coordinates; defaults to the origin.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    at: Option<Vec<f64>>,
}

/// What was asked for, written next to the run's outputs.
#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    seed: u64,
    overrides: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            Error::Json(j) => CliError::Config(j.to_string()),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) if e.is_numerical() => 3,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

fn read_config(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(config_err(format!("{} must hold a JSON object", path.display())));
    }
    Ok(v)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(config_err(format!("malformed key {key:?}")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| config_err(format!("cannot set {key}: parent is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {s:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Applies explicit flags and `--set` overrides; returns the keys touched.
fn apply(base: &mut Value, flags: Vec<(&str, Option<Value>)>, run: &RunArgs) -> CliResult<Vec<String>> {
    let mut touched = Vec::new();
    for (k, v) in flags {
        if let Some(v) = v {
            set_path(base, k, v)?;
            touched.push(k.to_string());
        }
    }
    if let Some(seed) = run.seed {
        set_path(base, "seed", seed.into())?;
        touched.push("seed".into());
    }
    for o in &run.overrides {
        let (k, v) = parse_override(o)?;
        set_path(base, &k, v)?;
        touched.push(k);
    }
    Ok(touched)
}

fn require<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| config_err(format!("--{flag} is required without --config")))
}

fn json<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|x| serde_json::to_value(x).expect("flag values serialize"))
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> CliResult<T> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| config_err(format!("unknown {what} {s:?}")))
}

fn strict<T: serde::de::DeserializeOwned>(v: Value) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| config_err(e.to_string()))
}

/// Without a config file the schedule follows the budget unless given explicitly.
fn schedule_follows(touched: &[String], from_file: bool) -> bool {
    !from_file && !touched.iter().any(|k| k.starts_with("warmup") || k.starts_with("lr_drop"))
}

fn finish(report: ExperimentReport, subcommand: &str, run: &RunArgs) -> CliResult<()> {
    report.write_run_dir(&run.out, run.force)?;
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config_path: run.config.clone(),
        output_dir: run.out.clone(),
        seed: report.seed,
        overrides: run.overrides.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n";
    std::fs::write(run.out.join("manifest.json"), text).map_err(Error::from)?;
    println!("{} run {} -> {}", report.kind, report.run_id, run.out.display());
    for (k, v) in &report.summary {
        println!("  {k:<28} {v:.6e}");
    }
    Ok(())
}

fn cmd_rof(a: &RofArgs) -> CliResult<()> {
    let from_file = a.run.config.is_some();
    let mut base = match &a.run.config {
        Some(p) => read_config(p)?,
        None => {
            let variant: RofVariant = parse_enum(&require(a.variant.clone(), "variant")?, "variant")?;
            let c = RofConfig::new(require(a.n, "n")?, require(a.eta, "eta")?, variant, require(a.run.seed, "seed")?);
            serde_json::to_value(c).map_err(Error::from)?
        }
    };
    let touched = apply(
        &mut base,
        vec![
            ("n", json(a.n)),
            ("eta", json(a.eta)),
            ("variant", json(a.variant.clone())),
            ("iterations", json(a.iterations)),
            ("batch_size", json(a.batch_size)),
        ],
        &a.run,
    )?;
    let mut config: RofConfig = strict(base)?;
    if schedule_follows(&touched, from_file) {
        config.set_schedule_defaults();
    }
    finish(run_rof(&config)?, "rof", &a.run)
}

fn cmd_matrix(a: &MatrixArgs) -> CliResult<()> {
    let mut base = match &a.run.config {
        Some(p) => read_config(p)?,
        None => serde_json::to_value(MatrixEquivConfig::new(require(a.eta, "eta")?, require(a.run.seed, "seed")?))
            .map_err(Error::from)?,
    };
    apply(
        &mut base,
        vec![("eta", json(a.eta)), ("rows", json(a.rows)), ("cols", json(a.cols))],
        &a.run,
    )?;
    let config: MatrixEquivConfig = strict(base)?;
    let y = config.matrix()?;
    finish(run_matrix_equiv(&y, &config)?, "matrix-equiv", &a.run)
}

fn cmd_shrinkage(a: &ShrinkageArgs) -> CliResult<()> {
    let mut base = match &a.run.config {
        Some(p) => read_config(p)?,
        None => serde_json::json!({
            "dim": require(a.dim, "dim")?,
            "samples": require(a.samples, "samples")?,
            "rank": require(a.rank, "rank")?,
            "noise_std": require(a.noise_std, "noise-std")?,
            "seed": require(a.run.seed, "seed")?,
        }),
    };
    apply(
        &mut base,
        vec![
            ("dim", json(a.dim)),
            ("samples", json(a.samples)),
            ("rank", json(a.rank)),
            ("noise_std", json(a.noise_std)),
        ],
        &a.run,
    )?;
    let config: ShrinkageConfig = strict(base)?;
    finish(run_shrinkage(&config)?, "shrinkage", &a.run)
}

fn cmd_denoise(a: &DenoiseArgs) -> CliResult<()> {
    let from_file = a.run.config.is_some();
    let mut base = match &a.run.config {
        Some(p) => read_config(p)?,
        None => {
            let kind: ManifoldKind = parse_enum(a.manifold.as_deref().unwrap_or("circle"), "manifold")?;
            let spec = ManifoldSpec::new(
                kind,
                a.ambient_dim.unwrap_or(10),
                a.samples.unwrap_or(4096),
                a.noise_std.unwrap_or(0.3),
            );
            serde_json::to_value(DenoiseConfig::new(spec, require(a.run.seed, "seed")?)).map_err(Error::from)?
        }
    };
    let touched = apply(
        &mut base,
        vec![
            ("manifold.kind", json(a.manifold.clone())),
            ("manifold.ambient_dim", json(a.ambient_dim)),
            ("manifold.samples", json(a.samples)),
            ("manifold.noise_std", json(a.noise_std)),
            ("iterations", json(a.iterations)),
        ],
        &a.run,
    )?;
    let mut config: DenoiseConfig = strict(base)?;
    if schedule_follows(&touched, from_file) {
        config.set_schedule_defaults();
    }
    finish(run_synthetic_denoise(&config)?, "denoise", &a.run)
}

fn cmd_frob(a: &FrobArgs) -> CliResult<()> {
    let x = a.at.clone().unwrap_or_else(|| vec![0.0; a.n]);
    if x.len() != a.n {
        return Err(config_err(format!("--at has {} coordinates, --n is {}", x.len(), a.n)));
    }
    if a.n == 0 || !(a.sigma > 0.0) || a.k == 0 {
        return Err(config_err("need n >= 1, sigma > 0 and k >= 1"));
    }
    let f = |t: &Tensor| -> jacnuc::Result<Tensor> {
        Ok(match a.function {
            TestFn::Sin => t.sin(),
            TestFn::Cos => t.cos(),
            TestFn::Square => t.mul(t)?,
            TestFn::Identity => t.clone(),
        })
    };
    let exact: f64 = x
        .iter()
        .map(|v| match a.function {
            TestFn::Sin => v.cos().powi(2),
            TestFn::Cos => v.sin().powi(2),
            TestFn::Square => 4.0 * v * v,
            TestFn::Identity => 1.0,
        })
        .sum();
    let est = frob_norm_estimate(f, &x, a.sigma, a.k, &mut stream(a.seed, Stream::Probes, 0))?;
    println!("estimate  {:.6}", est.mean);
    println!("std_err   {:.6}", est.std_err);
    println!("exact     {exact:.6}");
    println!("samples   {}", est.samples);
    Ok(())
}

fn cmd_selftest() -> CliResult<bool> {
    let results = jacnuc::selftest::run_all();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:<width$}  {}", r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rof(a) => cmd_rof(a),
        Command::MatrixEquiv(a) => cmd_matrix(a),
        Command::Shrinkage(a) => cmd_shrinkage(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::EstimateFrob(a) => cmd_frob(a),
        Command::Selftest => match cmd_selftest() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
