//! The two targets, their moduli of smoothness and Besov-norm estimates.
//!
//! `cargo run --release --example besov_functions`

use besov_bnn::besov::{besov_norm_estimate, generate_dataset, modulus_curve, ModulusGrid, TrueFunction};

fn main() -> besov_bnn::Result<()> {
    let grid = ModulusGrid::default();
    for (f, s, p, q) in
        [(TrueFunction::Cantor, 2f64.ln() / 3f64.ln(), f64::INFINITY, f64::INFINITY), (TrueFunction::LogSingular, 1.5, 1.0, 1.0)]
    {
        let values: Vec<String> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&x| format!("{:.4}", f.eval(x).unwrap())).collect();
        println!("{f}: f(0, .25, .5, .75, 1) = {}", values.join(", "));
        let w = modulus_curve(&f, s.floor() as usize + 1, p, &grid)?;
        let (t0, t1) = (grid.t_grid[0], *grid.t_grid.last().unwrap());
        println!("  w(t={t0:.0e}) = {:.3e}, w(t={t1}) = {:.3e}", w[0], w.last().unwrap());
        println!("  Besov norm estimate (s={s:.3}, p={p}, q={q}): {:.4}", besov_norm_estimate(&f, s, p, q, &grid)?);
        let data = generate_dataset(&f, 5, 0.1, 7)?;
        println!("  sample: x = {:?}", data.x);
    }
    Ok(())
}
