//! Metric-entropy bound of the sparse network class at a design, and the thresholded variant.
//!
//! `cargo run --example covering`

use besov_bnn::arch::{covering_bound_truncated, covering_report, design_architecture, mixture_hyperparams, MixtureRecipe, SmoothnessSpec};

fn main() -> besov_bnn::Result<()> {
    let arch = design_architecture(&SmoothnessSpec::cantor(), 100, 10.0)?;
    let delta = arch.eps / 36.0;
    let r = covering_report(&arch, delta)?;
    println!("L={} W={} S={} B={}", arch.depth, arch.width, arch.sparsity, arch.bound);
    println!("log N(delta) <= {:.4e}, n eps^2 = {:.2}, ratio {:.1}", r.bound, r.n_eps_sq, r.ratio);

    let mix = mixture_hyperparams(&arch, &MixtureRecipe::default())?;
    let a = mix.log_a.exp();
    match covering_bound_truncated(arch.depth, arch.width, arch.sparsity, arch.bound, a, delta) {
        Ok(b) => println!("thresholded at a_n = {a:e}: {b:.4e}"),
        Err(e) => println!("thresholded at a_n: {e}"),
    }
    match covering_bound_truncated(3, 8, 40, 2.0, 0.5, 1e-3) {
        Ok(b) => println!("small net: {b}"),
        Err(e) => println!("small net with a = 0.5, delta = 1e-3: {e}"),
    }
    Ok(())
}
