//! Architecture and mixture-prior hyperparameters for the two built-in targets.
//!
//! `cargo run --example design_tables`

use besov_bnn::arch::{Counting, MixtureRecipe, SmoothnessSpec};
use besov_bnn::experiment::design_rows;

fn main() -> besov_bnn::Result<()> {
    for (name, spec) in [("f1 (Cantor)", SmoothnessSpec::cantor()), ("f2 (log-singular)", SmoothnessSpec::log_singular())] {
        for counting in [Counting::Canonical, Counting::TableCompat] {
            let recipe = MixtureRecipe { counting, ..MixtureRecipe::default() };
            println!("{name}, {counting:?} counting");
            println!("{:>6} {:>4} {:>6} {:>12} {:>10} {:>8} {:>8}", "n", "L", "W", "log10 s1", "sigma2", "pi1", "pi2");
            for r in design_rows(&spec, &[100, 1000], 10.0, &recipe)? {
                println!(
                    "{:>6} {:>4} {:>6} {:>12.4} {:>10.4} {:>8.4} {:>8.4}",
                    r.n, r.depth, r.width, r.log10_sigma1, r.sigma2, r.pi1, r.pi2
                );
            }
            println!();
        }
    }
    Ok(())
}
