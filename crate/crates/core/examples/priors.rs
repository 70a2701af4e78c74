//! Draws from the shrinkage, spike-and-slab and architecture priors.
//!
//! `cargo run --example priors`

use besov_bnn::arch::{design_architecture, mixture_hyperparams, MixtureRecipe, SmoothnessSpec};
use besov_bnn::priors::{arch_prior_sample, mixture_sample, spike_slab_sample, ArchPriorSpec, SpikeSlabSpec};

fn main() -> besov_bnn::Result<()> {
    let arch = design_architecture(&SmoothnessSpec::log_singular(), 100, 10.0)?;
    let mix = mixture_hyperparams(&arch, &MixtureRecipe::default())?;
    let draws = mixture_sample(&mix, 100_000, 1);
    let slab = draws.iter().filter(|v| v.abs() > 1e-30).count();
    println!("mixture: pi2 = {:.4}, fraction of slab-sized draws {:.4}", mix.pi2, slab as f64 / draws.len() as f64);

    let ss = SpikeSlabSpec::new(20, 4, 1.0)?;
    let d = spike_slab_sample(&ss, 2);
    println!("spike-and-slab active set {:?}", d.gamma);

    let ap = ArchPriorSpec { lambda: 3.0, rho: 2.0, beta: 0.5, base_width: arch.base_width };
    for seed in 0..3 {
        let a = arch_prior_sample(&ap, seed)?;
        println!("architecture draw: N={} L={} B={:.2} W={} S={}", a.units, a.depth, a.bound, a.width, a.sparsity);
    }
    Ok(())
}
