//! One variational fit on the log-singular target, with a posterior-predictive band.
//!
//! `cargo run --release --example fit`

use besov_bnn::besov::TrueFunction;
use besov_bnn::experiment::{run_fit, ExperimentConfig};

fn main() -> besov_bnn::Result<()> {
    let cfg = ExperimentConfig::new(TrueFunction::LogSingular, vec![300])?;
    let fit = run_fit(&cfg, 300, 0)?;
    println!("network {:?}, T = {}", fit.shape.hidden, fit.shape.param_count());
    println!("final ELBO {:.1}", fit.trace.last().copied().unwrap_or(f64::NAN));
    println!("posterior-mean error {:.4}, band coverage {:.3}", fit.summary.mean_error, fit.band_coverage);
    for i in (0..fit.summary.grid.len()).step_by(25) {
        println!(
            "x={:.3} f0={:.4} mean={:.4} [{:.4}, {:.4}]",
            fit.summary.grid[i],
            TrueFunction::LogSingular.eval(fit.summary.grid[i])?,
            fit.summary.mean[i],
            fit.summary.lower[i],
            fit.summary.upper[i]
        );
    }
    Ok(())
}
