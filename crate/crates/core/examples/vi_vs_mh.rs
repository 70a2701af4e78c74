//! Variational and Metropolis posterior-predictive means on a four-unit network.
//!
//! `cargo run --release --example vi_vs_mh`

use besov_bnn::besov::{generate_dataset, TrueFunction};
use besov_bnn::mh::{compare_vi_mh, mh_sample, MHConfig};
use besov_bnn::net::NetworkShape;
use besov_bnn::priors::{Gaussian, ProductPrior};
use besov_bnn::vi::{posterior_predictive, train, unit_grid, TrainConfig};

fn main() -> besov_bnn::Result<()> {
    let f = TrueFunction::constant(0.5);
    let data = generate_dataset(&f, 200, 0.1, 1)?;
    let shape = NetworkShape::uniform(1, 1, 4)?;
    let prior = ProductPrior(Gaussian { sd: 1.0 });
    let vi = train(&shape, &data, &prior, &TrainConfig { iterations: 5000, seed: 2, ..TrainConfig::default() })?;
    let grid = unit_grid(101);
    let summary = posterior_predictive(&vi.state, &shape, &grid, 2000, &f, &data, 0.05, 3)?;
    let chain = mh_sample(&shape, &data, &prior, 0.1, &MHConfig { seed: 4, ..MHConfig::default() })?;
    let report = compare_vi_mh(&summary, &chain, &grid, 0.1)?;
    println!("MH acceptance {:.3}", chain.acceptance_rate());
    println!("sup |VI - MH| = {:.4} at x = {:.2}", report.max_abs_diff, grid[report.argmax]);
    Ok(())
}
