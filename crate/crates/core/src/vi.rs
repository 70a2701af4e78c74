//! Mean-field Gaussian variational inference for ReLU network weights (Bayes by Backprop).
//!
//! `q(θ) = Π_j N(μ_j, σ_j²)` with `σ_j = softplus(ρ_j)`. The entropy of `q` is used in
//! closed form; the likelihood and the log-prior are averaged over reparameterized draws
//! `θ = μ + σ ⊙ ζ`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{empirical_norm, Dataset, ScalarFunction};
use crate::error::{Error, Result};
use crate::net::{Evaluator, NetworkParams, NetworkShape, FLATTEN_ORDER};
use crate::priors::LogPrior;
use crate::special::{self, sigmoid, softplus, softplus_inv, LN_SQRT_2PI};
use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl VariationalState {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>, step: u64, seed: u64) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::ShapeMismatch(format!("mu has {} entries, rho has {}", mu.len(), rho.len())));
        }
        if rho.iter().any(|r| !r.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("variational parameters".into()));
        }
        Ok(Self { mu, rho, step, seed })
    }

    /// `μ` drawn with per-layer scale `fan_in^{-1/2}`, all `σ_q` equal to `init_sd`.
    pub fn init(shape: &NetworkShape, init_sd: f64, seed: u64) -> Self {
        let mu = NetworkParams::random_init(shape.clone(), seed).into_flat();
        let rho = vec![softplus_inv(init_sd); mu.len()];
        Self { mu, rho, step: 0, seed }
    }

    /// Point mass at `params` (up to `σ_q = sd`).
    pub fn around(params: &NetworkParams, sd: f64, seed: u64) -> Self {
        let mu = params.flat().to_vec();
        let rho = vec![softplus_inv(sd); mu.len()];
        Self { mu, rho, step: 0, seed }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `Σ_j ln σ_j + T (½ + ln √(2π))`
    pub fn entropy(&self) -> f64 {
        let per = 0.5 + LN_SQRT_2PI;
        self.rho.iter().map(|&r| softplus(r).ln() + per).sum()
    }

    pub fn sample_into(&self, zeta: &[f64], theta: &mut [f64]) {
        for ((t, z), (m, r)) in theta.iter_mut().zip(zeta).zip(self.mu.iter().zip(&self.rho)) {
            *t = m + softplus(*r) * z;
        }
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu.iter().zip(&self.rho).map(|(m, r)| m + softplus(*r) * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    pub fn check_shape(&self, shape: &NetworkShape) -> Result<()> {
        if self.len() != shape.param_count() {
            return Err(Error::ShapeMismatch(format!("state has {} coordinates, network has {}", self.len(), shape.param_count())));
        }
        Ok(())
    }

    pub fn mean_params(&self, shape: &NetworkShape) -> Result<NetworkParams> {
        NetworkParams::from_flat(shape.clone(), self.mu.clone())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Adam with `β = (0.9, 0.999)`.
    #[default]
    AdaptiveMoment,
    PlainGradient,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive-moment" | "adam" => Ok(Self::AdaptiveMoment),
            "plain-gradient" | "sgd" => Ok(Self::PlainGradient),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}` (adaptive-moment, plain-gradient)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// `None` uses every observation at every step.
    pub batch_size: Option<usize>,
    pub mc_samples_per_step: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Known noise standard deviation of the likelihood.
    pub noise_sd: f64,
    /// Initial `σ_q`.
    pub init_sd: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: None,
            mc_samples_per_step: 1,
            learning_rate: 1e-3,
            optimizer: Optimizer::AdaptiveMoment,
            seed: 0,
            noise_sd: 0.1,
            init_sd: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.mc_samples_per_step == 0 || self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("iterations, batch size and MC samples must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.noise_sd > 0.0) || !(self.init_sd > 0.0) {
            return Err(Error::InvalidArgument("noise sd and initial σ_q must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub elbo_se: f64,
    /// Mean of `ln p(D | θ_s)`.
    pub data_term: f64,
    /// Mean of `ln π(θ_s)`.
    pub log_prior: f64,
    pub entropy: f64,
    /// `E_q[ln q − ln π]`
    pub kl: f64,
    pub kl_se: f64,
    pub mc: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboGradient {
    pub value: f64,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

fn check_inputs(state: &VariationalState, shape: &NetworkShape, data: &Dataset, sigma: f64, mc: usize) -> Result<()> {
    state.check_shape(shape)?;
    if data.d != shape.d_in {
        return Err(Error::ShapeMismatch(format!("data dimension {} vs network input {}", data.d, shape.d_in)));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be positive, got {sigma}")));
    }
    if mc == 0 {
        return Err(Error::InvalidArgument("need at least one Monte Carlo sample".into()));
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Monte Carlo ELBO with `mc` reparameterized draws; deterministic in `seed`.
pub fn elbo_estimate(
    state: &VariationalState,
    shape: &NetworkShape,
    data: &Dataset,
    prior: &dyn LogPrior,
    sigma: f64,
    mc: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    check_inputs(state, shape, data, sigma, mc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev = Evaluator::new(shape);
    let mut zeta = vec![0.0; state.len()];
    let mut theta = vec![0.0; state.len()];
    let mut lls = Vec::with_capacity(mc);
    let mut lps = Vec::with_capacity(mc);
    for _ in 0..mc {
        zeta.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        state.sample_into(&zeta, &mut theta);
        lls.push(if data.is_empty() { 0.0 } else { ev.loglik(&theta, data, sigma) });
        lps.push(prior.ln_density(&theta));
    }
    let entropy = state.entropy();
    let (data_term, _) = mean_and_se(&lls);
    let (log_prior, kl_se) = mean_and_se(&lps);
    let joint: Vec<f64> = lls.iter().zip(&lps).map(|(a, b)| a + b).collect();
    let (_, elbo_se) = mean_and_se(&joint);
    Ok(ElboEstimate { elbo: data_term + log_prior + entropy, elbo_se, data_term, log_prior, entropy, kl: -entropy - log_prior, kl_se, mc })
}

/// Buffers for repeated gradient evaluation.
struct GradWork {
    ev: Evaluator,
    theta: Vec<f64>,
    g_theta: Vec<f64>,
}

impl GradWork {
    fn new(shape: &NetworkShape) -> Self {
        let t = shape.param_count();
        Self { ev: Evaluator::new(shape), theta: vec![0.0; t], g_theta: vec![0.0; t] }
    }

    /// Objective `mean_s[scale · ln p(D_batch | θ_s) + ln π(θ_s)] + H(q)` and its pathwise gradient.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        state: &VariationalState,
        data: &Dataset,
        subset: Option<&[usize]>,
        scale: f64,
        prior: &dyn LogPrior,
        sigma: f64,
        zetas: &[&[f64]],
        grad_mu: &mut [f64],
        grad_rho: &mut [f64],
    ) -> f64 {
        grad_mu.fill(0.0);
        grad_rho.fill(0.0);
        let w = 1.0 / zetas.len() as f64;
        let mut total = 0.0;
        for zeta in zetas {
            state.sample_into(zeta, &mut self.theta);
            self.g_theta.fill(0.0);
            if !data.is_empty() {
                total += self.ev.loglik_grad(&self.theta, data, subset, sigma, scale, &mut self.g_theta);
            }
            total += prior.ln_density(&self.theta);
            prior.accumulate_grad(&self.theta, &mut self.g_theta);
            for j in 0..self.theta.len() {
                let g = self.g_theta[j] * w;
                grad_mu[j] += g;
                grad_rho[j] += g * zeta[j] * sigmoid(state.rho[j]);
            }
        }
        // d/dρ ln softplus(ρ) = sigmoid(ρ) / softplus(ρ)
        for (g, &r) in grad_rho.iter_mut().zip(&state.rho) {
            *g += sigmoid(r) / softplus(r);
        }
        total * w + state.entropy()
    }
}

/// Pathwise gradient of the ELBO with the standard-normal draws held fixed.
pub fn elbo_gradient_frozen(
    state: &VariationalState,
    shape: &NetworkShape,
    data: &Dataset,
    prior: &dyn LogPrior,
    sigma: f64,
    zetas: &[Vec<f64>],
) -> Result<ElboGradient> {
    check_inputs(state, shape, data, sigma, zetas.len())?;
    if zetas.iter().any(|z| z.len() != state.len()) {
        return Err(Error::ShapeMismatch("noise draw length differs from the state".into()));
    }
    let mut work = GradWork::new(shape);
    let mut mu = vec![0.0; state.len()];
    let mut rho = vec![0.0; state.len()];
    let refs: Vec<&[f64]> = zetas.iter().map(Vec::as_slice).collect();
    let value = work.run(state, data, None, 1.0, prior, sigma, &refs, &mut mu, &mut rho);
    Ok(ElboGradient { value, mu, rho })
}

/// Pathwise ELBO gradient over `mc` fresh draws; deterministic in `seed`.
pub fn elbo_gradient(
    state: &VariationalState,
    shape: &NetworkShape,
    data: &Dataset,
    prior: &dyn LogPrior,
    sigma: f64,
    mc: usize,
    seed: u64,
) -> Result<ElboGradient> {
    check_inputs(state, shape, data, sigma, mc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zetas: Vec<Vec<f64>> = (0..mc).map(|_| (0..state.len()).map(|_| rng.sample(StandardNormal)).collect()).collect();
    elbo_gradient_frozen(state, shape, data, prior, sigma, &zetas)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: VariationalState,
    /// Single-draw ELBO estimate at every iteration, before the update.
    pub trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Ascent step on the concatenation of all blocks.
    fn step(&mut self, lr: f64, blocks: [(&mut [f64], &[f64]); 2]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut offset = 0;
        for (params, grad) in blocks {
            for (j, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                let m = &mut self.m[offset + j];
                let v = &mut self.v[offset + j];
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p += lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
            offset += params.len();
        }
    }
}

/// Stochastic ascent on the ELBO from the initialization in `config`.
pub fn train(shape: &NetworkShape, data: &Dataset, prior: &dyn LogPrior, config: &TrainConfig) -> Result<TrainOutcome> {
    let init = VariationalState::init(shape, config.init_sd, config.seed);
    train_from(init, shape, data, prior, config)
}

/// Continues ascent from an existing state.
pub fn train_from(
    mut state: VariationalState,
    shape: &NetworkShape,
    data: &Dataset,
    prior: &dyn LogPrior,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_inputs(&state, shape, data, config.noise_sd, config.mc_samples_per_step)?;
    let n = data.len();
    let batch = config.batch_size.map_or(n, |b| b.min(n));
    let scale = if batch == 0 { 1.0 } else { n as f64 / batch as f64 };
    // stream 0 initialized the means; training noise uses its own stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let t = state.len();
    let mut work = GradWork::new(shape);
    let mut grad_mu = vec![0.0; t];
    let mut grad_rho = vec![0.0; t];
    let mut zeta_buf = vec![0.0; t * config.mc_samples_per_step];
    let mut adam = Adam::new(2 * t);
    let mut trace = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let subset = (batch < n).then(|| index::sample(&mut rng, n, batch).into_vec());
        zeta_buf.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        let zetas: Vec<&[f64]> = zeta_buf.chunks_exact(t).collect();
        let value = work.run(&state, data, subset.as_deref(), scale, prior, config.noise_sd, &zetas, &mut grad_mu, &mut grad_rho);
        if !value.is_finite() {
            return Err(Error::Diverged { step, detail: format!("ELBO estimate is {value}") });
        }
        trace.push(value);
        match config.optimizer {
            Optimizer::AdaptiveMoment => adam.step(config.learning_rate, [(&mut state.mu, &grad_mu), (&mut state.rho, &grad_rho)]),
            Optimizer::PlainGradient => {
                for (p, g) in state.mu.iter_mut().zip(&grad_mu).chain(state.rho.iter_mut().zip(&grad_rho)) {
                    *p += config.learning_rate * g;
                }
            }
        }
        if let Some(j) = state.mu.iter().chain(&state.rho).position(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, detail: format!("parameter {j} became non-finite") });
        }
        state.step += 1;
    }
    state.seed = config.seed;
    Ok(TrainOutcome { state, trace })
}

/// Pointwise summary of `K` networks drawn from `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub shape: NetworkShape,
    pub alpha: f64,
    pub draws: usize,
    /// Grid points, row-major in the input dimension.
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Empirical `α/2` quantile.
    pub lower: Vec<f64>,
    /// Empirical `1 − α/2` quantile.
    pub upper: Vec<f64>,
    pub sd: Vec<f64>,
    /// `Φ⁻¹(1 − α/2)`, the multiplier for the `mean ± k·sd` band.
    pub band_k: f64,
    /// `‖f_θk − f₀‖_n` on the training inputs, one per draw.
    pub errors: Vec<f64>,
    /// `‖mean_k f_θk − f₀‖_n` on the training inputs.
    pub mean_error: f64,
}

impl PredictiveSummary {
    pub fn sd_lower(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.sd).map(|(m, s)| m - self.band_k * s).collect()
    }

    pub fn sd_upper(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.sd).map(|(m, s)| m + self.band_k * s).collect()
    }

    pub fn median_error(&self) -> f64 {
        median(&self.errors)
    }

    /// `x, mean, lo, hi` plus the `mean ± k·sd` band.
    pub fn write_band_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.shape.d_in;
        let xs: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
        writeln!(out, "{},mean,lo,hi,mean_minus_ksd,mean_plus_ksd", xs.join(","))?;
        let (sl, su) = (self.sd_lower(), self.sd_upper());
        for (i, x) in self.grid.chunks_exact(d).enumerate() {
            let xs: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{},{:?},{:?},{:?},{:?},{:?}", xs.join(","), self.mean[i], self.lower[i], self.upper[i], sl[i], su[i])?;
        }
        Ok(())
    }

    pub fn write_errors_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "error")?;
        for e in &self.errors {
            writeln!(out, "{e:?}")?;
        }
        Ok(())
    }
}

/// Type-7 empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Seeded generator for draw `k`: one ChaCha stream per draw, so draws are order-independent.
pub fn draw_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Samples `draws` networks from `q`, evaluates them on `grid` and on the training inputs.
#[allow(clippy::too_many_arguments)]
pub fn posterior_predictive(
    state: &VariationalState,
    shape: &NetworkShape,
    grid: &[f64],
    draws: usize,
    f0: &(dyn ScalarFunction + Sync),
    data: &Dataset,
    alpha: f64,
    seed: u64,
) -> Result<PredictiveSummary> {
    state.check_shape(shape)?;
    if draws < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws, got {draws}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = shape.d_in;
    if !grid.len().is_multiple_of(d) || data.d != d {
        return Err(Error::ShapeMismatch("grid or data dimension differs from the network input".into()));
    }
    let targets: Vec<f64> = data.points().map(|p| f0.value(p[0])).collect();
    let per_draw: Vec<(Vec<f64>, Vec<f64>)> = (0..draws as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = draw_rng(seed, k);
            let theta = state.sample_theta(&mut rng);
            let mut ev = Evaluator::new(shape);
            let on_grid = grid.chunks_exact(d).map(|x| ev.forward(&theta, x)).collect();
            let on_train = data.points().map(|x| ev.forward(&theta, x)).collect();
            (on_grid, on_train)
        })
        .collect();
    summarize_draws(shape, grid, alpha, &per_draw, &targets)
}

/// Builds a summary from per-draw `(grid values, training-input values)`.
pub fn summarize_draws(
    shape: &NetworkShape,
    grid: &[f64],
    alpha: f64,
    per_draw: &[(Vec<f64>, Vec<f64>)],
    targets: &[f64],
) -> Result<PredictiveSummary> {
    let k = per_draw.len();
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws".into()));
    }
    let g = grid.len() / shape.d_in;
    let mut mean = vec![0.0; g];
    let mut lower = vec![0.0; g];
    let mut upper = vec![0.0; g];
    let mut sd = vec![0.0; g];
    let mut column = vec![0.0; k];
    for i in 0..g {
        for (c, (on_grid, _)) in column.iter_mut().zip(per_draw) {
            *c = on_grid[i];
        }
        let (m, se) = mean_and_se(&column);
        mean[i] = m;
        sd[i] = se * (k as f64).sqrt();
        column.sort_by(f64::total_cmp);
        lower[i] = quantile_sorted(&column, alpha / 2.0);
        upper[i] = quantile_sorted(&column, 1.0 - alpha / 2.0);
    }
    let mut errors = Vec::with_capacity(k);
    let mut train_mean = vec![0.0; targets.len()];
    for (_, on_train) in per_draw {
        let diff: Vec<f64> = on_train.iter().zip(targets).map(|(f, t)| f - t).collect();
        errors.push(if diff.is_empty() { 0.0 } else { empirical_norm(&diff)? });
        for (acc, f) in train_mean.iter_mut().zip(on_train) {
            *acc += f / k as f64;
        }
    }
    let mean_diff: Vec<f64> = train_mean.iter().zip(targets).map(|(f, t)| f - t).collect();
    let mean_error = if mean_diff.is_empty() { 0.0 } else { empirical_norm(&mean_diff)? };
    Ok(PredictiveSummary {
        shape: shape.clone(),
        alpha,
        draws: k,
        grid: grid.to_vec(),
        mean,
        lower,
        upper,
        sd,
        band_k: special::isf(alpha / 2.0),
        errors,
        mean_error,
    })
}

/// Evenly spaced points `0, 1/(m−1), …, 1`.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEnvelope {
    pub schema_version: u32,
    pub shape: NetworkShape,
    #[serde(rename = "T")]
    pub param_count: usize,
    pub flatten_order: String,
    pub seed: u64,
    pub step: u64,
    /// Little-endian f64 arrays, relative to the envelope.
    pub mu_file: String,
    pub rho_file: String,
}

fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_f64_le(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != expected * 8 {
        return Err(Error::ShapeMismatch(format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), expected * 8)));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn write_f64_array(path: &Path, values: &[f64]) -> Result<()> {
    write_f64_le(path, values)
}

pub fn read_f64_array(path: &Path) -> Result<Vec<f64>> {
    let len = std::fs::metadata(path)?.len() as usize;
    if !len.is_multiple_of(8) {
        return Err(Error::ShapeMismatch(format!("{} is not a whole number of f64 values", path.display())));
    }
    read_f64_le(path, len / 8)
}

fn sibling(envelope: &Path, suffix: &str) -> PathBuf {
    let stem = envelope.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    envelope.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes `<stem>.json` plus `<stem>.mu.bin` and `<stem>.rho.bin` next to it.
pub fn save_checkpoint(state: &VariationalState, shape: &NetworkShape, envelope_path: &Path) -> Result<()> {
    state.check_shape(shape)?;
    let mu_path = sibling(envelope_path, "mu.bin");
    let rho_path = sibling(envelope_path, "rho.bin");
    let file_name = |p: &Path| p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let envelope = CheckpointEnvelope {
        schema_version: SCHEMA_VERSION,
        shape: shape.clone(),
        param_count: shape.param_count(),
        flatten_order: FLATTEN_ORDER.to_string(),
        seed: state.seed,
        step: state.step,
        mu_file: file_name(&mu_path),
        rho_file: file_name(&rho_path),
    };
    write_f64_le(&mu_path, &state.mu)?;
    write_f64_le(&rho_path, &state.rho)?;
    std::fs::write(envelope_path, serde_json::to_string_pretty(&envelope)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(envelope_path: &Path) -> Result<(NetworkShape, VariationalState)> {
    let envelope: CheckpointEnvelope = serde_json::from_str(&std::fs::read_to_string(envelope_path)?)?;
    if envelope.flatten_order != FLATTEN_ORDER {
        return Err(Error::Mismatch(format!(
            "checkpoint uses flattening `{}`, this build reads `{FLATTEN_ORDER}`",
            envelope.flatten_order
        )));
    }
    let shape = NetworkShape::new(envelope.shape.d_in, envelope.shape.hidden)?;
    if shape.param_count() != envelope.param_count {
        return Err(Error::ShapeMismatch(format!("envelope T = {} but shape has {}", envelope.param_count, shape.param_count())));
    }
    let dir = envelope_path.parent().unwrap_or(Path::new("."));
    let mu = read_f64_le(&dir.join(&envelope.mu_file), envelope.param_count)?;
    let rho = read_f64_le(&dir.join(&envelope.rho_file), envelope.param_count)?;
    let state = VariationalState::new(mu, rho, envelope.step, envelope.seed)?;
    Ok((shape, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{DiagonalGaussian, FlatPrior, Gaussian, ProductPrior};
    use approx::assert_relative_eq;

    fn tiny() -> (NetworkShape, Dataset) {
        let shape = NetworkShape::uniform(1, 2, 4).unwrap();
        let data = crate::besov::generate_dataset(&|x: f64| (3.0 * x).sin(), 30, 0.1, 5).unwrap();
        (shape, data)
    }

    #[test]
    fn kl_against_itself_is_zero() {
        let (shape, data) = tiny();
        let state = VariationalState::init(&shape, 0.3, 1);
        let prior = DiagonalGaussian { mean: state.mu.clone(), sd: state.sigma() };
        let est = elbo_estimate(&state, &shape, &data, &prior, 0.1, 10_000, 4).unwrap();
        assert!(est.kl.abs() < 3.0 * est.kl_se, "kl {} se {}", est.kl, est.kl_se);
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let shape = NetworkShape::uniform(1, 1, 1).unwrap();
        let t = shape.param_count();
        let data = Dataset::empty(1);
        let prior = ProductPrior(Gaussian { sd: 1.0 });
        let q = VariationalState::new(vec![1.0; t], vec![softplus_inv(0.5); t], 0, 0).unwrap();
        let est = elbo_estimate(&q, &shape, &data, &prior, 0.1, 10_000, 9).unwrap();
        let closed = t as f64 * 0.5 * (0.25 + 1.0 - 1.0 - 0.25f64.ln());
        assert!((est.kl - closed).abs() < 3.0 * est.kl_se, "{} vs {closed}", est.kl);
        let q0 = VariationalState::new(vec![0.0; t], vec![softplus_inv(1.0); t], 0, 0).unwrap();
        let est0 = elbo_estimate(&q0, &shape, &data, &prior, 0.1, 10_000, 9).unwrap();
        assert!(est0.kl.abs() < 3.0 * est0.kl_se);
    }

    #[test]
    fn flat_prior_elbo_is_data_plus_entropy() {
        let (shape, data) = tiny();
        let state = VariationalState::init(&shape, 0.05, 2);
        let est = elbo_estimate(&state, &shape, &data, &FlatPrior, 0.1, 100, 1).unwrap();
        assert_relative_eq!(est.elbo - est.data_term, est.entropy, max_relative = 1e-12);
    }

    #[test]
    fn entropy_gradient_is_sigmoid_over_sigma() {
        let shape = NetworkShape::uniform(1, 1, 1).unwrap();
        let t = shape.param_count();
        let state = VariationalState::new(vec![0.0; t], vec![-0.7; t], 0, 0).unwrap();
        let zetas = vec![vec![0.0; t]];
        let g = elbo_gradient_frozen(&state, &shape, &Dataset::empty(1), &FlatPrior, 0.1, &zetas).unwrap();
        assert_relative_eq!(g.rho[0], sigmoid(-0.7) / softplus(-0.7), max_relative = 1e-14);
        assert!(g.mu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frozen_gradient_matches_finite_differences() {
        let (shape, data) = tiny();
        let mut state = VariationalState::init(&shape, 0.05, 3);
        let prior = ProductPrior(Gaussian { sd: 0.7 });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let zetas: Vec<Vec<f64>> = (0..2).map(|_| (0..state.len()).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let g = elbo_gradient_frozen(&state, &shape, &data, &prior, 0.1, &zetas).unwrap();
        let h = 1e-6;
        for j in [0, 3, 7, 12, 20, 30] {
            let base = state.mu[j];
            state.mu[j] = base + h;
            let up = elbo_gradient_frozen(&state, &shape, &data, &prior, 0.1, &zetas).unwrap().value;
            state.mu[j] = base - h;
            let down = elbo_gradient_frozen(&state, &shape, &data, &prior, 0.1, &zetas).unwrap().value;
            state.mu[j] = base;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.mu[j]).abs() <= 1e-5 * fd.abs().max(1.0), "mu {j}: {fd} vs {}", g.mu[j]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (shape, data) = tiny();
        let prior = ProductPrior(Gaussian { sd: 1.0 });
        let cfg = TrainConfig { iterations: 50, batch_size: Some(10), seed: 8, ..Default::default() };
        let a = train(&shape, &data, &prior, &cfg).unwrap();
        let b = train(&shape, &data, &prior, &cfg).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace.len(), 50);
        assert_eq!(a.state.step, 50);
    }

    #[test]
    fn divergence_is_reported() {
        let (shape, data) = tiny();
        let prior = ProductPrior(Gaussian { sd: 1.0 });
        let cfg = TrainConfig { iterations: 200, learning_rate: 1e6, optimizer: Optimizer::PlainGradient, ..Default::default() };
        assert!(matches!(train(&shape, &data, &prior, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn collapsed_posterior_gives_identical_draws() {
        let (shape, data) = tiny();
        let mut state = VariationalState::init(&shape, 1e-300, 1);
        state.rho.fill(-800.0);
        let grid = unit_grid(11);
        let f0 = |x: f64| x;
        let s = posterior_predictive(&state, &shape, &grid, 5, &f0, &data, 0.05, 3).unwrap();
        assert_eq!(s.lower, s.upper);
        for (m, l) in s.mean.iter().zip(&s.lower) {
            assert_relative_eq!(m, l, max_relative = 1e-14);
        }
        assert!(s.errors.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (shape, _) = tiny();
        let mut state = VariationalState::init(&shape, 0.02, 77);
        state.step = 12;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&state, &shape, &path).unwrap();
        assert!(dir.path().join("ckpt.mu.bin").exists());
        let (shape2, state2) = load_checkpoint(&path).unwrap();
        assert_eq!(shape2, shape);
        assert_eq!(state2, state);
    }
}
