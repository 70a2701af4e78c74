//! Spike, tail and support conditions for the Gaussian-mixture prior and for a plain N(0, 1).
//!
//! `cargo run --example check_prior`

use besov_bnn::arch::{
    check_shrinkage_conditions, design_architecture, mixture_hyperparams, CheckOptions, MixtureRecipe, MixtureVariant, SmoothnessSpec,
};
use besov_bnn::priors::Gaussian;

fn main() -> besov_bnn::Result<()> {
    let spec = SmoothnessSpec::log_singular();
    let recipe = MixtureRecipe { variant: MixtureVariant::Theorem, ..MixtureRecipe::default() };
    let opts = CheckOptions::default();
    for n in [100, 500, 1000, 5000] {
        let arch = design_architecture(&spec, n, 10.0)?;
        let mix = mixture_hyperparams(&arch, &recipe)?;
        for r in [check_shrinkage_conditions(&mix, &arch, &opts)?, check_shrinkage_conditions(&Gaussian { sd: 1.0 }, &arch, &opts)?] {
            println!(
                "n={n:<5} {:<8} spike {:<5} tail {:<5} support {:<5}  -ln g(B)={:.1} vs {:.1}",
                r.density, r.pass_spike, r.pass_tail, r.pass_support, r.tail_lhs, r.tail_rhs
            );
        }
    }
    Ok(())
}
