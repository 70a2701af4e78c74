//! Median posterior-mean error against n, with the fitted log-log slope.
//!
//! `cargo run --release --example rate_study`

use besov_bnn::besov::TrueFunction;
use besov_bnn::experiment::{rate_study, ExperimentConfig};

fn main() -> besov_bnn::Result<()> {
    let cfg = ExperimentConfig::new(TrueFunction::LogSingular, vec![100, 300, 1000])?;
    let res = rate_study(&cfg, 3)?;
    for (n, e) in res.n.iter().zip(&res.median_error) {
        println!("n={n:<6} median error {e:.4}");
    }
    println!("slope {:.3} (theory {:.3})", res.slope, res.theoretical_slope);
    Ok(())
}
