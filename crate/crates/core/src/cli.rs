//! Command-line front end: `design`, `fit`, `predict`, `check-prior`, `rate-study`, `covering`.
//!
//! Exit codes: 0 success, 1 runtime failure (including failed prior checks), 2 invalid arguments.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::arch::{
    check_shrinkage_conditions, covering_bound, covering_bound_truncated, covering_report, design_architecture, CheckOptions, Counting,
    MixtureRecipe, MixtureVariant, SmoothnessSpec,
};
use crate::besov::{generate_dataset, Dataset, TrueFunction};
use crate::error::{Error, Result};
use crate::experiment::{builtin_smoothness, derive_seed, design_rows, network_for, rate_study, ExperimentConfig, PriorChoice, RunSeeds};
use crate::priors::{density_by_name, DENSITY_NAMES};
use crate::vi::{load_checkpoint, posterior_predictive, save_checkpoint, train, unit_grid, Optimizer, TrainConfig};
use crate::SCHEMA_VERSION;

const SUBCOMMANDS: [&str; 6] = ["design", "fit", "predict", "check-prior", "rate-study", "covering"];

#[derive(Parser, Debug)]
#[command(name = "besov-bnn", version, about = "Bayesian ReLU networks for Besov-space regression", args_override_self = true)]
pub struct Cli {
    /// Base seed; every derived seed is recorded in the outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// JSON object whose keys mirror the long flags; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Allow the prescribed (large) network geometries.
    #[arg(long, global = true)]
    pub full_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Architecture and mixture-prior hyperparameters for each n.
    Design(DesignArgs),
    /// Generate data, train the variational posterior and summarize predictions.
    Fit(FitArgs),
    /// Posterior-predictive summary from a saved checkpoint.
    Predict(PredictArgs),
    /// Check the shrinkage-prior conditions over a grid of n.
    CheckPrior(CheckPriorArgs),
    /// Median posterior-mean error against n, with the fitted log-log slope.
    RateStudy(RateStudyArgs),
    /// Metric-entropy bound of the sparse network class for a design.
    Covering(CoveringArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    /// Built-in target: f1 (Cantor) or f2 (log-singular); sets the smoothness defaults.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub s: Option<f64>,
    /// Integrability; `inf` allowed.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum CountingArg {
    Canonical,
    TableCompat,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum VariantArg {
    Experiment,
    Theorem,
}

#[derive(Args, Debug, Clone)]
pub struct PriorArgs {
    #[arg(long, default_value_t = 10.0)]
    pub cb: f64,
    #[arg(long, default_value_t = 5.0)]
    pub k0: f64,
    #[arg(long, value_enum, default_value = "canonical")]
    pub counting: CountingArg,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, default_value = "100,1000")]
    pub n: Vec<u64>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, value_enum, default_value = "experiment")]
    pub variant: VariantArg,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3000)]
    pub iterations: usize,
    /// 0 uses the full sample at every step.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub mc: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "adaptive-moment")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub init_sd: f64,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Marginal of the product prior: mixture, gauss, laplace or uniform-slab.
    #[arg(long, default_value = "mixture")]
    pub prior: String,
    /// Scale of the gauss and laplace priors.
    #[arg(long, default_value_t = 1.0)]
    pub prior_scale: f64,
    #[arg(long, value_enum, default_value = "experiment")]
    pub variant: VariantArg,
    #[command(flatten)]
    pub design: PriorArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 100)]
    pub n: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Record wall-clock durations in the manifest (makes it run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target used for the empirical errors.
    #[arg(long, default_value = "f2")]
    pub function: String,
    /// Training data CSV (`x_1,y`); errors are taken on the grid when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
}

#[derive(Args, Debug)]
pub struct CheckPriorArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, default_value = "100,500,1000,5000")]
    pub n: Vec<u64>,
    #[arg(long, default_value = "mixture")]
    pub density: String,
    /// Scale of the gauss and laplace densities.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, value_enum, default_value = "theorem")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 5.0)]
    pub k: f64,
    #[arg(long, default_value_t = 10.0)]
    pub tail_constant: f64,
    #[arg(long, default_value_t = 1.0)]
    pub support_tol: f64,
}

#[derive(Args, Debug)]
pub struct RateStudyArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, default_value = "100,300,1000")]
    pub n: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    pub replicates: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 200)]
    pub draws: usize,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
}

#[derive(Args, Debug)]
pub struct CoveringArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 100)]
    pub n: u64,
    #[arg(long, default_value_t = 10.0)]
    pub cb: f64,
    /// Covering radius; defaults to ε_n/36.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Truncation threshold for the thresholded-network bound.
    #[arg(long)]
    pub a: Option<f64>,
    /// Natural log of the truncation threshold, for thresholds below double range.
    #[arg(long, conflicts_with = "a")]
    pub log_a: Option<f64>,
}

impl From<CountingArg> for Counting {
    fn from(c: CountingArg) -> Self {
        match c {
            CountingArg::Canonical => Counting::Canonical,
            CountingArg::TableCompat => Counting::TableCompat,
        }
    }
}

impl From<VariantArg> for MixtureVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Experiment => MixtureVariant::Experiment,
            VariantArg::Theorem => MixtureVariant::Theorem,
        }
    }
}

impl SpecArgs {
    fn target(&self) -> Result<Option<TrueFunction>> {
        self.function.as_deref().map(str::parse).transpose()
    }

    fn resolve(&self) -> Result<SmoothnessSpec> {
        let base = match self.target()? {
            Some(f) => builtin_smoothness(&f)?,
            None => {
                let (Some(s), Some(p)) = (self.s, self.p) else {
                    return Err(Error::InvalidArgument("give --function or both --s and --p".into()));
                };
                SmoothnessSpec { s, p, q: self.q.unwrap_or(p), d: 1, m: 2 }
            }
        };
        SmoothnessSpec::new(
            self.s.unwrap_or(base.s),
            self.p.unwrap_or(base.p),
            self.q.unwrap_or(base.q),
            self.d.unwrap_or(base.d),
            self.m.unwrap_or(base.m),
        )
    }

    fn require_target(&self) -> Result<TrueFunction> {
        self.target()?.ok_or_else(|| Error::InvalidArgument("--function is required".into()))
    }
}

impl PriorArgs {
    fn recipe(&self, variant: VariantArg) -> MixtureRecipe {
        MixtureRecipe { k0: self.k0, variant: variant.into(), counting: self.counting.into() }
    }
}

impl TrainArgs {
    fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.iterations,
            batch_size: (self.batch_size > 0).then_some(self.batch_size),
            mc_samples_per_step: self.mc,
            learning_rate: self.lr,
            optimizer: self.optimizer.parse::<Optimizer>()?,
            seed,
            noise_sd: self.noise_sd,
            init_sd: self.init_sd,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn prior_choice(&self) -> Result<PriorChoice> {
        if !DENSITY_NAMES.contains(&self.prior.as_str()) {
            return Err(Error::UnknownDensity(self.prior.clone()));
        }
        Ok(PriorChoice { density: self.prior.clone(), scale: self.prior_scale, recipe: self.design.recipe(self.variant) })
    }

    #[allow(clippy::too_many_arguments)]
    fn experiment(
        &self,
        f: TrueFunction,
        spec: SmoothnessSpec,
        n_list: Vec<u64>,
        draws: usize,
        grid_points: usize,
        seed: u64,
        full_scale: bool,
    ) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig {
            function: f,
            n_list,
            smoothness: spec,
            c_b: self.design.cb,
            prior: self.prior_choice()?,
            train: self.train_config(seed)?,
            depth: self.depth,
            width: self.width,
            full_scale,
            draws,
            alpha: self.alpha,
            grid_points,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidSmoothness(_)
        | Error::UnknownDensity(_)
        | Error::DeltaTooSmall { .. }
        | Error::Domain(_) => 2,
        _ => 1,
    }
}

/// Turns a `--config` JSON object into long flags inserted after the subcommand name.
fn config_to_args(value: &Value) -> Result<Vec<String>> {
    let Value::Object(map) = value else {
        return Err(Error::InvalidArgument("config file must hold a JSON object".into()));
    };
    let mut args = Vec::new();
    for (key, v) in map {
        if key == "config" || key == "command" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag),
            Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar_text).collect::<Result<_>>()?;
                args.push(flag);
                args.push(joined.join(","));
            }
            other => {
                args.push(flag);
                args.push(scalar_text(other)?);
            }
        }
    }
    Ok(args)
}

fn scalar_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(Error::InvalidArgument(format!("unsupported config value {other}"))),
    }
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).map(PathBuf::from)
        } else {
            a.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}

/// Applies `--config`: its flags go right after the subcommand, so explicit flags override them.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {} is not valid JSON: {e}", path.display())))?;
    let extra = config_to_args(&value)?;
    match args.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) {
        Some(i) => {
            let at = i + 2;
            args.splice(at..at, extra);
        }
        None => {
            let cmd = value.get("command").and_then(Value::as_str).ok_or_else(|| Error::InvalidArgument("no subcommand given".into()))?;
            let mut rest = vec![cmd.to_string()];
            rest.extend(extra);
            args.splice(1..1, rest);
        }
    }
    Ok(args)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{text}");
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    let _ = write!(err, "{text}");
                    2
                }
            };
        }
    };
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Error::DeltaTooSmall { min_delta, ln_min_delta } = e {
                let _ = writeln!(err, "minimal admissible delta: {min_delta:e} (ln = {ln_min_delta})");
            }
            exit_code(&e)
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args(), &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Design(a) => cmd_design(cli, a, out),
        Command::Fit(a) => cmd_fit(cli, a, out, err),
        Command::Predict(a) => cmd_predict(cli, a, out),
        Command::CheckPrior(a) => cmd_check_prior(cli, a, out),
        Command::RateStudy(a) => cmd_rate_study(cli, a, out, err),
        Command::Covering(a) => cmd_covering(cli, a, out),
    }
}

fn prepare_out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out_dir)?;
    Ok(&cli.out_dir)
}

fn cmd_design(cli: &Cli, a: &DesignArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = a.spec.resolve()?;
    if a.n.is_empty() {
        return Err(Error::InvalidArgument("--n needs at least one value".into()));
    }
    let recipe = a.prior.recipe(a.variant);
    let rows = design_rows(&spec, &a.n, a.prior.cb, &recipe)?;
    let dir = prepare_out_dir(cli)?;
    let header = "n,N,L,W,S,T,B,eps,sigma1,log10_sigma1,sigma2,pi1,pi2";
    let mut csv = create_file(&dir.join("design.csv"))?;
    writeln!(csv, "{header}")?;
    writeln!(
        out,
        "{:>6} {:>4} {:>3} {:>6} {:>10} {:>10} {:>12} {:>12} {:>9} {:>8} {:>8}",
        "n", "L", "W", "N", "S", "T", "sigma1", "log10_s1", "sigma2", "pi1", "pi2"
    )?;
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.n, r.units, r.depth, r.width, r.sparsity, r.total_params, r.bound, r.eps, r.sigma1, r.log10_sigma1, r.sigma2, r.pi1, r.pi2
        )?;
        writeln!(
            out,
            "{:>6} {:>4} {:>3} {:>6} {:>10} {:>10} {:>12.4e} {:>12.4} {:>9.4} {:>8.4} {:>8.4}",
            r.n, r.depth, r.width, r.units, r.sparsity, r.total_params, r.sigma1, r.log10_sigma1, r.sigma2, r.pi1, r.pi2
        )?;
    }
    csv.flush()?;
    write_json(
        &dir.join("design.json"),
        &json!({ "schema_version": SCHEMA_VERSION, "smoothness": spec_json(&spec), "c_b": a.prior.cb, "recipe": recipe, "rows": rows }),
    )?;
    Ok(0)
}

fn spec_json(spec: &SmoothnessSpec) -> Value {
    serde_json::to_value(spec).unwrap_or(Value::Null)
}

#[derive(Serialize)]
struct FitManifest<'a> {
    schema_version: u32,
    command: &'static str,
    status: &'static str,
    error: Option<String>,
    config: &'a ExperimentConfig,
    seeds: RunSeeds,
    arch: Option<crate::arch::ArchSpec>,
    mixture: Option<crate::priors::MixturePriorSpec>,
    network: Option<Value>,
    summary: Option<Value>,
    outputs: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    durations_s: Option<Value>,
}

fn cmd_fit(cli: &Cli, a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let f0 = a.spec.require_target()?;
    let spec = a.spec.resolve()?;
    let seeds = RunSeeds::derive(cli.seed, a.n, 0);
    let cfg = a.train.experiment(f0.clone(), spec, vec![a.n], a.draws, a.grid_points, cli.seed, cli.full_scale)?;
    let arch = design_architecture(&spec, a.n, cfg.c_b)?;
    let (prior, mixture) = cfg.prior.build(&arch)?;
    let shape = network_for(&arch, cfg.depth, cfg.width, cfg.full_scale)?;
    if cli.full_scale {
        writeln!(err, "warning: full-scale network with {} parameters; training will be slow", shape.param_count())?;
    }
    let dir = prepare_out_dir(cli)?;
    let data = generate_dataset(&f0, a.n as usize, cfg.train.noise_sd, seeds.data)?;
    data.save_csv(&dir.join("data.csv"))?;
    let mut manifest = FitManifest {
        schema_version: SCHEMA_VERSION,
        command: "fit",
        status: "ok",
        error: None,
        config: &cfg,
        seeds,
        arch: Some(arch.clone()),
        mixture: Some(mixture.clone()),
        network: Some(json!({ "depth": shape.depth(), "width": shape.hidden[0], "T": shape.param_count() })),
        summary: None,
        outputs: vec!["data.csv"],
        durations_s: None,
    };
    let train_cfg = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    let t0 = Instant::now();
    let trained = match train(&shape, &data, &prior, &train_cfg) {
        Ok(t) => t,
        Err(e) => {
            manifest.status = "failed";
            manifest.error = Some(e.to_string());
            write_json(&dir.join("manifest.json"), &manifest)?;
            return Err(e);
        }
    };
    let train_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let grid = unit_grid(cfg.grid_points);
    let summary = posterior_predictive(&trained.state, &shape, &grid, cfg.draws, &f0, &data, cfg.alpha, seeds.predictive)?;
    let predict_s = t1.elapsed().as_secs_f64();
    save_checkpoint(&trained.state, &shape, &dir.join("checkpoint.json"))?;
    summary.write_band_csv(create_file(&dir.join("predictive.csv"))?)?;
    summary.write_errors_csv(create_file(&dir.join("errors.csv"))?)?;
    let mut trace = create_file(&dir.join("trace.csv"))?;
    writeln!(trace, "iteration,elbo")?;
    for (i, v) in trained.trace.iter().enumerate() {
        writeln!(trace, "{i},{v:?}")?;
    }
    trace.flush()?;
    let coverage = crate::experiment::band_coverage(&summary, &f0);
    manifest.outputs.extend([
        "checkpoint.json",
        "checkpoint.mu.bin",
        "checkpoint.rho.bin",
        "predictive.csv",
        "errors.csv",
        "trace.csv",
        "manifest.json",
    ]);
    manifest.summary = Some(json!({
        "posterior_mean_error": summary.mean_error,
        "median_draw_error": summary.median_error(),
        "band_coverage": coverage,
        "final_elbo": trained.trace.last(),
        "draws": cfg.draws,
        "alpha": cfg.alpha,
    }));
    if a.timings {
        manifest.durations_s = Some(json!({ "train": train_s, "predict": predict_s }));
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    writeln!(out, "function {} n {} network L={} W={} T={}", f0.id(), a.n, shape.depth(), shape.hidden[0], shape.param_count())?;
    writeln!(
        out,
        "posterior-mean error {:.6}  median draw error {:.6}  band coverage {:.3}",
        summary.mean_error,
        summary.median_error(),
        coverage
    )?;
    writeln!(err, "train {train_s:.2}s, predict {predict_s:.2}s")?;
    Ok(0)
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let f0: TrueFunction = a.function.parse()?;
    let (shape, state) = load_checkpoint(&a.checkpoint)?;
    let grid = unit_grid(a.grid_points);
    let data = match &a.data {
        Some(p) => Dataset::read_csv(std::io::BufReader::new(std::fs::File::open(p)?), 0.0, 0)?,
        None => {
            let y = grid.iter().map(|&x| f0.eval(x)).collect::<Result<Vec<_>>>()?;
            Dataset::new(1, grid.clone(), y, 0.0, 0)?
        }
    };
    let seed = derive_seed(cli.seed, 3);
    let summary = posterior_predictive(&state, &shape, &grid, a.draws, &f0, &data, a.alpha, seed)?;
    let dir = prepare_out_dir(cli)?;
    summary.write_band_csv(create_file(&dir.join("predictive.csv"))?)?;
    summary.write_errors_csv(create_file(&dir.join("errors.csv"))?)?;
    write_json(
        &dir.join("predict.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "checkpoint": a.checkpoint,
            "seed": seed,
            "draws": a.draws,
            "alpha": a.alpha,
            "posterior_mean_error": summary.mean_error,
            "median_draw_error": summary.median_error(),
            "band_coverage": crate::experiment::band_coverage(&summary, &f0),
        }),
    )?;
    writeln!(out, "posterior-mean error {:.6}  median draw error {:.6}", summary.mean_error, summary.median_error())?;
    Ok(0)
}

fn cmd_check_prior(cli: &Cli, a: &CheckPriorArgs, out: &mut dyn Write) -> Result<i32> {
    if !DENSITY_NAMES.contains(&a.density.as_str()) {
        return Err(Error::UnknownDensity(a.density.clone()));
    }
    let spec = a.spec.resolve()?;
    if a.n.is_empty() {
        return Err(Error::InvalidArgument("--n needs at least one value".into()));
    }
    let recipe = a.prior.recipe(a.variant);
    let opts = CheckOptions {
        k: a.k,
        k0: a.prior.k0,
        tail_constant: a.tail_constant,
        support_tol: a.support_tol,
        counting: a.prior.counting.into(),
    };
    let mut reports = Vec::new();
    for &n in &a.n {
        let arch = design_architecture(&spec, n, a.prior.cb)?;
        let mixture = crate::arch::mixture_hyperparams(&arch, &recipe)?;
        let g = density_by_name(&a.density, &mixture, a.scale)?;
        let report = check_shrinkage_conditions(&g, &arch, &opts)?;
        writeln!(
            out,
            "n={n:<6} spike {} tail {} support {}  (1-u_n={:.4e}, S/T={:.4}, -ln g(B)={:.1} vs {:.1}, ln v_n={:.1} vs {:.1})",
            verdict(report.pass_spike),
            verdict(report.pass_tail),
            verdict(report.pass_support),
            report.ln_one_minus_u.exp(),
            report.sparsity_ratio,
            report.tail_lhs,
            report.tail_rhs,
            report.ln_v_n,
            report.support_rhs_ln
        )?;
        reports.push(report);
    }
    let all_pass = reports.iter().all(|r| r.all_pass());
    let dir = prepare_out_dir(cli)?;
    write_json(
        &dir.join("check_prior.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "density": a.density,
            "smoothness": spec_json(&spec),
            "recipe": recipe,
            "options": opts,
            "all_pass": all_pass,
            "reports": reports,
        }),
    )?;
    writeln!(out, "{}", if all_pass { "all conditions hold" } else { "some conditions fail" })?;
    Ok(if all_pass { 0 } else { 1 })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn cmd_rate_study(cli: &Cli, a: &RateStudyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if a.n.len() < 3 {
        return Err(Error::InvalidArgument(format!("rate study needs at least 3 values of n, got {}", a.n.len())));
    }
    let f0 = a.spec.require_target()?;
    let spec = a.spec.resolve()?;
    let cfg = a.train.experiment(f0, spec, a.n.clone(), a.draws, a.grid_points, cli.seed, cli.full_scale)?;
    let t0 = Instant::now();
    let result = rate_study(&cfg, a.replicates)?;
    let dir = prepare_out_dir(cli)?;
    write_json(&dir.join("rate_study.json"), &json!({ "config": cfg, "result": result, "schema_version": SCHEMA_VERSION }))?;
    let mut csv = create_file(&dir.join("rate_study.csv"))?;
    writeln!(csv, "n,replicate,error")?;
    for r in &result.replicates {
        let e = r.error.map_or_else(|| "NA".to_string(), |v| format!("{v:?}"));
        writeln!(csv, "{},{},{}", r.n, r.replicate, e)?;
    }
    csv.flush()?;
    let mut summary = create_file(&dir.join("rate_summary.csv"))?;
    writeln!(summary, "n,median_error")?;
    for (n, m) in result.n.iter().zip(&result.median_error) {
        writeln!(summary, "{n},{m:?}")?;
        writeln!(out, "n={n:<6} median posterior-mean error {m:.6}")?;
    }
    summary.flush()?;
    writeln!(
        out,
        "fitted slope {:.4}  theoretical {:.4}{}",
        result.slope,
        result.theoretical_slope,
        if result.partial { "  (partial)" } else { "" }
    )?;
    writeln!(err, "rate study {:.1}s", t0.elapsed().as_secs_f64())?;
    Ok(if result.partial { 1 } else { 0 })
}

fn cmd_covering(cli: &Cli, a: &CoveringArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = a.spec.resolve()?;
    let arch = design_architecture(&spec, a.n, a.cb)?;
    let delta = a.delta.unwrap_or(arch.eps / 36.0);
    let report = covering_report(&arch, delta)?;
    let doubled = covering_bound(arch.depth, arch.width, arch.sparsity, arch.bound, 2.0 * delta)?;
    let ln_a = match (a.a, a.log_a) {
        (Some(v), _) if v > 0.0 => Some(v.ln()),
        (Some(v), _) => return Err(Error::InvalidArgument(format!("threshold must be positive, got {v}"))),
        (None, l) => l,
    };
    let truncated = match ln_a {
        Some(l) => {
            // evaluate the floor condition in log space; a itself may underflow
            let ln_min = crate::special::LN_2 + l + arch.ln_lipschitz_factor();
            let slack = 1e-12 * ln_min.abs().max(1.0);
            if delta.ln() < ln_min - slack {
                return Err(Error::DeltaTooSmall { min_delta: ln_min.exp(), ln_min_delta: ln_min });
            }
            let bound = match a.a {
                Some(v) => covering_bound_truncated(arch.depth, arch.width, arch.sparsity, arch.bound, v, delta)?,
                None => report.bound,
            };
            Some(json!({ "ln_a": l, "ln_min_delta": ln_min, "bound": bound }))
        }
        None => None,
    };
    let dir = prepare_out_dir(cli)?;
    let value = json!({
        "schema_version": SCHEMA_VERSION,
        "n": a.n,
        "depth": arch.depth,
        "width": arch.width,
        "sparsity": arch.sparsity,
        "bound_b": arch.bound,
        "delta": delta,
        "log_covering_bound": report.bound,
        "n_eps_sq": report.n_eps_sq,
        "ratio": report.ratio,
        "log_covering_bound_2delta": doubled,
        "drop_when_doubled": report.bound - doubled,
        "designed_ln_a": arch.ln_spike_threshold(),
        "truncated": truncated,
    });
    write_json(&dir.join("covering.json"), &value)?;
    writeln!(out, "n={} L={} W={} S={} B={:.4} delta={:.6e}", a.n, arch.depth, arch.width, arch.sparsity, arch.bound, delta)?;
    writeln!(out, "log covering bound {:.6e}  n eps^2 {:.6e}  ratio {:.4}", report.bound, report.n_eps_sq, report.ratio)?;
    writeln!(out, "doubling delta lowers the bound by {:.6e}", report.bound - doubled)?;
    Ok(0)
}
