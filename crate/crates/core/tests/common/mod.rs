#![allow(dead_code)]

use besov_bnn::besov::{generate_dataset, Dataset};
use besov_bnn::net::{loglik_and_grad, NetworkParams, NetworkShape};
use besov_bnn::priors::{Gaussian, ProductPrior};
use besov_bnn::vi::{elbo_gradient_frozen, VariationalState};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct GoldenRow {
    pub function: String,
    pub n: u64,
    pub depth: u64,
    pub width: u64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub pi1: f64,
    pub pi2: f64,
}

pub fn golden_rows() -> Vec<GoldenRow> {
    let text = include_str!("../golden/design_tables.csv");
    text.lines()
        .skip(1)
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            GoldenRow {
                function: c[0].to_string(),
                n: c[1].parse().unwrap(),
                depth: c[2].parse().unwrap(),
                width: c[3].parse().unwrap(),
                sigma1: c[4].parse().unwrap(),
                sigma2: c[5].parse().unwrap(),
                pi1: c[6].parse().unwrap(),
                pi2: c[7].parse().unwrap(),
            }
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn smooth_data(n: usize, seed: u64) -> Dataset {
    generate_dataset(&|x: f64| (4.0 * x).sin() + 0.3 * x, n, 0.2, seed).unwrap()
}

/// Worst relative error of the log-likelihood gradient against central differences
/// on `coords` random coordinates.
pub fn loglik_fd_worst(depth: usize, width: usize, coords: usize, seed: u64) -> f64 {
    let shape = NetworkShape::uniform(1, depth, width).unwrap();
    let mut params = NetworkParams::random_init(shape, seed);
    let data = smooth_data(25, seed + 100);
    let sigma = 0.5;
    let (_, grad) = loglik_and_grad(&params, &data, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in index::sample(&mut rng, params.len(), coords.min(params.len())) {
        let base = params.flat()[j];
        params.flat_mut()[j] = base + h;
        let up = besov_bnn::net::loglik(&params, &data, sigma).unwrap();
        params.flat_mut()[j] = base - h;
        let down = besov_bnn::net::loglik(&params, &data, sigma).unwrap();
        params.flat_mut()[j] = base;
        worst = worst.max(rel_err((up - down) / (2.0 * h), grad[j]));
    }
    worst
}

/// Same check for the frozen-noise ELBO, over both `μ` and `ρ` coordinates.
pub fn elbo_fd_worst(depth: usize, width: usize, coords: usize, seed: u64) -> f64 {
    let shape = NetworkShape::uniform(1, depth, width).unwrap();
    let mut state = VariationalState::init(&shape, 0.05, seed);
    let data = smooth_data(25, seed + 200);
    let prior = ProductPrior(Gaussian { sd: 0.8 });
    let sigma = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let zetas: Vec<Vec<f64>> = (0..2).map(|_| (0..state.len()).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let g = elbo_gradient_frozen(&state, &shape, &data, &prior, sigma, &zetas).unwrap();
    let value = |s: &VariationalState| elbo_gradient_frozen(s, &shape, &data, &prior, sigma, &zetas).unwrap().value;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in index::sample(&mut rng, state.len(), coords.min(state.len())) {
        for which in 0..2 {
            let slot = if which == 0 { &mut state.mu[j] } else { &mut state.rho[j] };
            let base = *slot;
            *slot = base + h;
            let up = value(&state);
            let slot = if which == 0 { &mut state.mu[j] } else { &mut state.rho[j] };
            *slot = base - h;
            let down = value(&state);
            let slot = if which == 0 { &mut state.mu[j] } else { &mut state.rho[j] };
            *slot = base;
            let analytic = if which == 0 { g.mu[j] } else { g.rho[j] };
            worst = worst.max(rel_err((up - down) / (2.0 * h), analytic));
        }
    }
    worst
}

/// Random parameters in Θ(L, W, S, B): entries uniform on [−B, B], about a third zeroed.
pub fn random_sparse_net(rng: &mut ChaCha8Rng, depth: usize, width: usize, bound: f64) -> NetworkParams {
    let shape = NetworkShape::uniform(1, depth, width).unwrap();
    let t = shape.param_count();
    let theta = (0..t).map(|_| if rng.random::<f64>() < 0.33 { 0.0 } else { rng.random_range(-bound..=bound) }).collect();
    NetworkParams::from_flat(shape, theta).unwrap()
}

/// Mean and batch-means standard error of a correlated sequence.
pub fn batch_means(values: &[f64], batches: usize) -> (f64, f64) {
    let size = values.len() / batches;
    let means: Vec<f64> = values.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let k = means.len() as f64;
    let m = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let m = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}
