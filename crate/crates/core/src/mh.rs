//! Random-walk Metropolis over network weights, for cross-checking the variational fit on tiny nets.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::besov::Dataset;
use crate::error::{Error, Result};
use crate::net::{Evaluator, NetworkParams, NetworkShape, FLATTEN_ORDER};
use crate::priors::LogPrior;
use crate::vi::{write_f64_array, PredictiveSummary};
use crate::SCHEMA_VERSION;

/// Largest parameter count the sampler accepts.
pub const MH_PARAM_CAP: usize = 200;

const TARGET_ACCEPTANCE: f64 = 0.234;
const ADAPT_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MHConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_sd: f64,
    pub thin: usize,
    pub seed: u64,
    /// Tune the proposal scale toward 0.234 acceptance during burn-in.
    pub adapt: bool,
}

impl Default for MHConfig {
    fn default() -> Self {
        Self { steps: 200_000, burn_in: 50_000, proposal_sd: 0.02, thin: 10, seed: 0, adapt: true }
    }
}

impl MHConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::InvalidArgument(format!("steps ({}) must exceed burn-in ({})", self.steps, self.burn_in)));
        }
        if !(self.proposal_sd > 0.0) || !self.proposal_sd.is_finite() {
            return Err(Error::InvalidArgument(format!("proposal sd must be positive, got {}", self.proposal_sd)));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thinning interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Post-burn-in draws of a Metropolis run over `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawChain {
    pub dim: usize,
    /// Kept draws, row-major `kept × dim`.
    pub samples: Vec<f64>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Proposal scale in force after burn-in.
    pub proposal_sd: f64,
}

impl RawChain {
    pub fn kept(&self) -> usize {
        self.samples.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn draw(&self, k: usize) -> &[f64] {
        &self.samples[k * self.dim..(k + 1) * self.dim]
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim)
    }

    /// Coordinate `j` across kept draws.
    pub fn trace(&self, j: usize) -> Vec<f64> {
        self.draws().map(|d| d[j]).collect()
    }
}

/// Spherical Gaussian random-walk Metropolis targeting `exp(log_target)`.
pub fn metropolis<F: FnMut(&[f64]) -> f64>(init: Vec<f64>, mut log_target: F, config: &MHConfig) -> Result<RawChain> {
    config.validate()?;
    let dim = init.len();
    let mut current = init;
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::NonFinite(format!("log target at the initial point is {current_lp}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut proposal = vec![0.0; dim];
    let mut ln_sd = config.proposal_sd.ln();
    let mut window_accepts = 0usize;
    let mut windows = 0usize;
    let mut accepted_after = 0usize;
    let mut samples = Vec::with_capacity((config.steps - config.burn_in) / config.thin * dim + dim);
    for step in 0..config.steps {
        let sd = ln_sd.exp();
        for (p, c) in proposal.iter_mut().zip(&current) {
            *p = c + sd * rng.sample::<f64, _>(StandardNormal);
        }
        let lp = log_target(&proposal);
        let u: f64 = rng.random();
        let accept = lp.is_finite() && u.ln() < lp - current_lp;
        if accept {
            std::mem::swap(&mut current, &mut proposal);
            current_lp = lp;
        }
        if step < config.burn_in {
            if config.adapt {
                window_accepts += accept as usize;
                if (step + 1) % ADAPT_WINDOW == 0 {
                    windows += 1;
                    let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                    ln_sd += (rate - TARGET_ACCEPTANCE) / (windows as f64).sqrt();
                    window_accepts = 0;
                }
            }
        } else {
            accepted_after += accept as usize;
            if (step - config.burn_in).is_multiple_of(config.thin) {
                samples.extend_from_slice(&current);
            }
        }
    }
    Ok(RawChain { dim, samples, acceptance_rate: accepted_after as f64 / (config.steps - config.burn_in) as f64, proposal_sd: ln_sd.exp() })
}

/// Metropolis chain over the weights of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub shape: NetworkShape,
    pub raw: RawChain,
    pub config: MHConfig,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        self.raw.acceptance_rate
    }

    pub fn params(&self) -> impl Iterator<Item = NetworkParams> + '_ {
        self.raw.draws().map(|d| NetworkParams::from_flat(self.shape.clone(), d.to_vec()).expect("chain rows match the shape"))
    }

    /// Average of `f_θ` over kept draws at each grid point.
    pub fn predictive_mean(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let d = self.shape.d_in;
        if !grid.len().is_multiple_of(d) {
            return Err(Error::ShapeMismatch("grid is not a whole number of points".into()));
        }
        let kept = self.raw.kept();
        if kept == 0 {
            return Err(Error::Empty("chain has no kept draws"));
        }
        let mut ev = Evaluator::new(&self.shape);
        let mut sums = vec![0.0; grid.len() / d];
        for theta in self.raw.draws() {
            for (s, x) in sums.iter_mut().zip(grid.chunks_exact(d)) {
                *s += ev.forward(theta, x);
            }
        }
        Ok(sums.into_iter().map(|s| s / kept as f64).collect())
    }

    /// Writes `<stem>.json` metadata and `<stem>.bin` with the kept draws.
    pub fn export(&self, envelope_path: &Path) -> Result<()> {
        let stem = envelope_path.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
        let bin = envelope_path.with_file_name(format!("{stem}.bin"));
        write_f64_array(&bin, &self.raw.samples)?;
        let meta = ChainMetadata {
            schema_version: SCHEMA_VERSION,
            shape: self.shape.clone(),
            param_count: self.raw.dim,
            flatten_order: FLATTEN_ORDER.to_string(),
            kept: self.raw.kept(),
            acceptance_rate: self.raw.acceptance_rate,
            proposal_sd: self.raw.proposal_sd,
            config: self.config.clone(),
            samples_file: bin.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        };
        let mut out = std::fs::File::create(envelope_path)?;
        writeln!(out, "{}", serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub schema_version: u32,
    pub shape: NetworkShape,
    #[serde(rename = "T")]
    pub param_count: usize,
    pub flatten_order: String,
    pub kept: usize,
    pub acceptance_rate: f64,
    pub proposal_sd: f64,
    pub config: MHConfig,
    pub samples_file: String,
}

/// Metropolis chain targeting `ln π(θ) + ln p(D | θ)`, started from the seeded initialization.
pub fn mh_sample(shape: &NetworkShape, data: &Dataset, prior: &dyn LogPrior, sigma: f64, config: &MHConfig) -> Result<Chain> {
    let init = NetworkParams::random_init(shape.clone(), config.seed).into_flat();
    mh_sample_from(shape, data, prior, sigma, config, init)
}

pub fn mh_sample_from(
    shape: &NetworkShape,
    data: &Dataset,
    prior: &dyn LogPrior,
    sigma: f64,
    config: &MHConfig,
    init: Vec<f64>,
) -> Result<Chain> {
    let t = shape.param_count();
    if t > MH_PARAM_CAP {
        return Err(Error::TooManyParameters { params: t, cap: MH_PARAM_CAP });
    }
    if init.len() != t {
        return Err(Error::ShapeMismatch(format!("initial point has {} coordinates, network has {t}", init.len())));
    }
    if data.d != shape.d_in {
        return Err(Error::ShapeMismatch(format!("data dimension {} vs network input {}", data.d, shape.d_in)));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be positive, got {sigma}")));
    }
    let mut ev = Evaluator::new(shape);
    let target = |theta: &[f64]| {
        let lp = prior.ln_density(theta);
        if !lp.is_finite() || data.is_empty() {
            return lp;
        }
        lp + ev.loglik(theta, data, sigma)
    };
    let raw = metropolis(init, target, config)?;
    Ok(Chain { shape: shape.clone(), raw, config: config.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub grid_points: usize,
    pub max_abs_diff: f64,
    /// Grid index where the largest difference occurs.
    pub argmax: usize,
    pub tolerance: f64,
    pub within_tolerance: bool,
    pub vi_mean: Vec<f64>,
    pub mh_mean: Vec<f64>,
}

/// Sup-norm distance between the VI and Metropolis posterior-predictive means on `grid`.
pub fn compare_vi_mh(vi: &PredictiveSummary, chain: &Chain, grid: &[f64], tolerance: f64) -> Result<ComparisonReport> {
    if vi.shape != chain.shape {
        return Err(Error::Mismatch(format!("VI network {:?} vs chain network {:?}", vi.shape, chain.shape)));
    }
    if vi.grid != grid {
        return Err(Error::Mismatch("VI summary was evaluated on a different grid".into()));
    }
    let mh_mean = chain.predictive_mean(grid)?;
    let (argmax, max_abs_diff) =
        vi.mean
            .iter()
            .zip(&mh_mean)
            .map(|(a, b)| (a - b).abs())
            .enumerate()
            .fold((0, 0.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        grid_points: mh_mean.len(),
        max_abs_diff,
        argmax,
        tolerance,
        within_tolerance: max_abs_diff < tolerance,
        vi_mean: vi.mean.clone(),
        mh_mean,
    })
}

/// Predictive summary of a chain's kept draws, in the same form as the VI summary.
pub fn chain_summary(
    chain: &Chain,
    grid: &[f64],
    data: &Dataset,
    f0: &dyn crate::besov::ScalarFunction,
    alpha: f64,
) -> Result<PredictiveSummary> {
    let d = chain.shape.d_in;
    let targets: Vec<f64> = data.points().map(|p| f0.value(p[0])).collect();
    let mut ev = Evaluator::new(&chain.shape);
    let per_draw: Vec<(Vec<f64>, Vec<f64>)> = chain
        .raw
        .draws()
        .map(|theta| {
            let g = grid.chunks_exact(d).map(|x| ev.forward(theta, x)).collect();
            let t = data.points().map(|x| ev.forward(theta, x)).collect();
            (g, t)
        })
        .collect();
    crate::vi::summarize_draws(&chain.shape, grid, alpha, &per_draw, &targets)
}
