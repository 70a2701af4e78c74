//! Experiment pipelines: design tables, fit-and-predict runs and contraction-rate studies.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{design_architecture, mixture_hyperparams, ArchSpec, MixtureRecipe, SmoothnessSpec};
use crate::besov::{generate_dataset, Dataset, ScalarFunction, TrueFunction};
use crate::error::{Error, Result};
use crate::net::NetworkShape;
use crate::priors::{density_by_name, MixturePriorSpec, ProductPrior, SymmetricDensity};
use crate::vi::{median, posterior_predictive, train, unit_grid, PredictiveSummary, TrainConfig, VariationalState};
use crate::SCHEMA_VERSION;

/// Parameter-count ceiling without `full_scale`.
pub const DESK_PARAM_CAP: usize = 100_000;
pub const DESK_DEPTH: usize = 3;
pub const DESK_WIDTH: usize = 32;

/// Smoothness of the built-in targets: Cantor `(log 2/log 3, ∞, ∞)`, log-singular `(3/2, 1, 1)`.
pub fn builtin_smoothness(f: &TrueFunction) -> Result<SmoothnessSpec> {
    match f {
        TrueFunction::Cantor => Ok(SmoothnessSpec::cantor()),
        TrueFunction::LogSingular => Ok(SmoothnessSpec::log_singular()),
        TrueFunction::UserTabulated(_) => Err(Error::InvalidArgument("tabulated targets need an explicit smoothness spec".into())),
    }
}

/// Seed for `stream` derived from `base`; streams never collide for distinct tags.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub base: u64,
    pub data: u64,
    pub train: u64,
    pub predictive: u64,
}

impl RunSeeds {
    pub fn derive(base: u64, n: u64, replicate: u64) -> Self {
        let tag = |purpose: u64| (n << 24) ^ (replicate << 4) ^ purpose;
        Self { base, data: derive_seed(base, tag(1)), train: derive_seed(base, tag(2)), predictive: derive_seed(base, tag(3)) }
    }
}

/// Marginal density for the product prior, by registered name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorChoice {
    pub density: String,
    /// Scale of `gauss` and `laplace`.
    pub scale: f64,
    pub recipe: MixtureRecipe,
}

impl Default for PriorChoice {
    fn default() -> Self {
        Self { density: "mixture".into(), scale: 1.0, recipe: MixtureRecipe::default() }
    }
}

impl PriorChoice {
    pub fn build(&self, arch: &ArchSpec) -> Result<(ProductPrior<Box<dyn SymmetricDensity>>, MixturePriorSpec)> {
        let mixture = mixture_hyperparams(arch, &self.recipe)?;
        let g = density_by_name(&self.density, &mixture, self.scale)?;
        Ok((ProductPrior(g), mixture))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub function: TrueFunction,
    pub n_list: Vec<u64>,
    pub smoothness: SmoothnessSpec,
    pub c_b: f64,
    pub prior: PriorChoice,
    pub train: TrainConfig,
    /// Hidden layers; `None` caps the design depth at [`DESK_DEPTH`].
    pub depth: Option<usize>,
    /// Hidden width; `None` caps the design width at [`DESK_WIDTH`].
    pub width: Option<usize>,
    pub full_scale: bool,
    pub draws: usize,
    pub alpha: f64,
    pub grid_points: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(function: TrueFunction, n_list: Vec<u64>) -> Result<Self> {
        let smoothness = builtin_smoothness(&function)?;
        Ok(Self {
            function,
            n_list,
            smoothness,
            c_b: 10.0,
            prior: PriorChoice::default(),
            train: TrainConfig { iterations: 3000, batch_size: Some(128), ..Default::default() },
            depth: None,
            width: None,
            full_scale: false,
            draws: 1000,
            alpha: 0.05,
            grid_points: 201,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::InvalidArgument("n list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("n list must be strictly increasing, got {:?}", self.n_list)));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidArgument("need at least 2 grid points".into()));
        }
        self.smoothness.validate()?;
        self.train.validate()
    }
}

/// Network used for a design: the prescribed geometry under `full_scale`, otherwise capped.
pub fn network_for(arch: &ArchSpec, depth: Option<usize>, width: Option<usize>, full_scale: bool) -> Result<NetworkShape> {
    let (l, w) = if full_scale {
        (depth.unwrap_or(arch.depth as usize), width.unwrap_or(arch.width as usize))
    } else {
        (depth.unwrap_or((arch.depth as usize).min(DESK_DEPTH)), width.unwrap_or((arch.width as usize).min(DESK_WIDTH)))
    };
    let shape = NetworkShape::uniform(arch.d, l, w)?;
    if !full_scale && shape.param_count() > DESK_PARAM_CAP {
        return Err(Error::InvalidArgument(format!(
            "network with L = {l}, W = {w} has {} parameters, above the desk-scale cap of {DESK_PARAM_CAP}; pass --full-scale to allow it",
            shape.param_count()
        )));
    }
    Ok(shape)
}

/// Everything produced by one generate → train → predict run.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub n: u64,
    pub replicate: u64,
    pub seeds: RunSeeds,
    pub arch: ArchSpec,
    pub mixture: MixturePriorSpec,
    pub shape: NetworkShape,
    pub data: Dataset,
    pub state: VariationalState,
    pub trace: Vec<f64>,
    pub summary: PredictiveSummary,
    /// Share of grid points whose true value lies inside the quantile band.
    pub band_coverage: f64,
}

pub fn band_coverage(summary: &PredictiveSummary, f0: &dyn ScalarFunction) -> f64 {
    let d = summary.shape.d_in;
    let hits = summary
        .grid
        .chunks_exact(d)
        .zip(summary.lower.iter().zip(&summary.upper))
        .filter(|(x, (lo, hi))| {
            let v = f0.value(x[0]);
            **lo <= v && v <= **hi
        })
        .count();
    hits as f64 / summary.mean.len() as f64
}

/// Runs one replicate at sample size `n`.
pub fn run_fit(cfg: &ExperimentConfig, n: u64, replicate: u64) -> Result<FitOutcome> {
    let seeds = RunSeeds::derive(cfg.seed, n, replicate);
    let arch = design_architecture(&cfg.smoothness, n, cfg.c_b)?;
    let (prior, mixture) = cfg.prior.build(&arch)?;
    let shape = network_for(&arch, cfg.depth, cfg.width, cfg.full_scale)?;
    let data = generate_dataset(&cfg.function, n as usize, cfg.train.noise_sd, seeds.data)?;
    let train_cfg = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    let out = train(&shape, &data, &prior, &train_cfg)?;
    let grid = unit_grid(cfg.grid_points);
    let summary = posterior_predictive(&out.state, &shape, &grid, cfg.draws, &cfg.function, &data, cfg.alpha, seeds.predictive)?;
    let coverage = band_coverage(&summary, &cfg.function);
    Ok(FitOutcome { n, replicate, seeds, arch, mixture, shape, data, state: out.state, trace: out.trace, summary, band_coverage: coverage })
}

/// Least-squares slope of `ln error` on `ln n`.
pub fn log_log_slope(ns: &[f64], errors: &[f64]) -> Result<f64> {
    if ns.len() != errors.len() || ns.len() < 2 {
        return Err(Error::InvalidArgument("need at least two (n, error) pairs".into()));
    }
    if ns.iter().chain(errors).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("sample sizes and errors must be positive".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("sample sizes must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: u64,
    pub replicate: u64,
    pub seeds: RunSeeds,
    pub depth: usize,
    pub width: usize,
    /// Posterior-mean empirical error, absent if the fit failed.
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub schema_version: u32,
    pub function: String,
    pub n: Vec<u64>,
    pub median_error: Vec<f64>,
    pub slope: f64,
    pub theoretical_slope: f64,
    /// Some replicate failed; medians use the successful ones.
    pub partial: bool,
    pub replicates: Vec<ReplicateRecord>,
}

/// Fits `replicates` seeded runs per sample size and regresses the median errors on `n`.
pub fn rate_study(cfg: &ExperimentConfig, replicates: u64) -> Result<RateStudyResult> {
    cfg.validate()?;
    if cfg.n_list.len() < 2 || replicates == 0 {
        return Err(Error::InvalidArgument("rate study needs at least two sample sizes and one replicate".into()));
    }
    let jobs: Vec<(u64, u64)> = cfg.n_list.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let seeds = RunSeeds::derive(cfg.seed, n, r);
            let geometry =
                design_architecture(&cfg.smoothness, n, cfg.c_b).and_then(|a| network_for(&a, cfg.depth, cfg.width, cfg.full_scale));
            let (depth, width) = geometry.as_ref().map_or((0, 0), |s| (s.depth(), s.hidden[0]));
            match run_fit(cfg, n, r) {
                Ok(out) => ReplicateRecord { n, replicate: r, seeds, depth, width, error: Some(out.summary.mean_error), failure: None },
                Err(e) => ReplicateRecord { n, replicate: r, seeds, depth, width, error: None, failure: Some(e.to_string()) },
            }
        })
        .collect();
    let partial = records.iter().any(|r| r.error.is_none());
    let mut ns = Vec::new();
    let mut medians = Vec::new();
    for &n in &cfg.n_list {
        let errs: Vec<f64> = records.iter().filter(|r| r.n == n).filter_map(|r| r.error).collect();
        if !errs.is_empty() {
            ns.push(n);
            medians.push(median(&errs));
        }
    }
    if ns.len() < 2 {
        let first = records.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
        return Err(Error::InvalidArgument(format!("fewer than two sample sizes produced a fit: {first}")));
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&nf, &medians)?;
    Ok(RateStudyResult {
        schema_version: SCHEMA_VERSION,
        function: cfg.function.id().to_string(),
        n: ns,
        median_error: medians,
        slope,
        theoretical_slope: -cfg.smoothness.rate_exponent(),
        partial,
        replicates: records,
    })
}

/// One row of the architecture/prior design table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub n: u64,
    pub units: u64,
    pub depth: u64,
    pub width: u64,
    pub sparsity: u64,
    pub total_params: u64,
    pub bound: f64,
    pub eps: f64,
    pub log_a: f64,
    pub eta: f64,
    pub sigma1: f64,
    pub log10_sigma1: f64,
    pub sigma2: f64,
    pub pi1: f64,
    pub pi2: f64,
}

pub fn design_rows(spec: &SmoothnessSpec, ns: &[u64], c_b: f64, recipe: &MixtureRecipe) -> Result<Vec<DesignRow>> {
    ns.iter()
        .map(|&n| {
            let arch = design_architecture(spec, n, c_b)?;
            let mix = mixture_hyperparams(&arch, recipe)?;
            Ok(DesignRow {
                n,
                units: arch.units,
                depth: arch.depth,
                width: arch.width,
                sparsity: arch.sparsity_count(recipe.counting),
                total_params: arch.param_count(recipe.counting),
                bound: arch.bound,
                eps: arch.eps,
                log_a: mix.log_a,
                eta: mix.eta,
                sigma1: mix.sigma1(),
                log10_sigma1: mix.log_sigma1 / std::f64::consts::LN_10,
                sigma2: mix.sigma2,
                pi1: mix.pi1,
                pi2: mix.pi2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_of_exact_power_law() {
        let ns = [100.0, 300.0, 1000.0, 3000.0];
        let errs: Vec<f64> = ns.iter().map(|n: &f64| 2.5 * n.powf(-0.375)).collect();
        assert!((log_log_slope(&ns, &errs).unwrap() + 0.375).abs() < 1e-12);
        assert!(log_log_slope(&[100.0], &[0.1]).is_err());
        assert!(log_log_slope(&[100.0, 200.0], &[0.1, 0.0]).is_err());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = RunSeeds::derive(7, 100, 0);
        assert_eq!(a, RunSeeds::derive(7, 100, 0));
        assert_ne!(a.data, a.train);
        assert_ne!(a, RunSeeds::derive(7, 100, 1));
        assert_ne!(a, RunSeeds::derive(7, 1000, 0));
    }

    #[test]
    fn desk_cap() {
        let arch = design_architecture(&SmoothnessSpec::cantor(), 1000, 10.0).unwrap();
        let s = network_for(&arch, None, None, false).unwrap();
        assert_eq!((s.depth(), s.hidden[0]), (DESK_DEPTH, DESK_WIDTH));
        assert!(network_for(&arch, Some(6), Some(200), false).is_err());
        let full = network_for(&arch, None, None, true).unwrap();
        assert_eq!((full.depth(), full.hidden[0]), (15, 1100));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(TrueFunction::LogSingular, vec![100, 1000]).unwrap();
        assert!(cfg.validate().is_ok());
        cfg.n_list = vec![1000, 100];
        assert!(cfg.validate().is_err());
        cfg.n_list.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn design_rows_match_tables() {
        let rows = design_rows(&SmoothnessSpec::log_singular(), &[100, 1000], 10.0, &MixtureRecipe::default()).unwrap();
        assert_eq!((rows[0].depth, rows[0].width), (13, 200));
        assert_eq!((rows[1].depth, rows[1].width), (17, 300));
        assert_relative_eq!(rows[1].sigma2, 0.4023, max_relative = 2e-4);
    }
}
