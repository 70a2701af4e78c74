//! Closed-form network geometry and prior hyperparameters for a Besov target,
//! plus numerical checks of the shrinkage-prior conditions and the covering
//! number bounds for sparse ReLU classes.
//!
//! Quantities such as `(B ∨ 1)^{L-1} (W+1)^L` overflow doubles for the
//! table-sized designs, so the threshold `a_n` and spike scale `σ₁` are only
//! ever handled through their natural logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{MixturePriorSpec, SymmetricDensity};
use crate::special::{self, LN_2};

/// Besov smoothness `s`, integrability `p`, `q`, input dimension `d` and the
/// approximation order `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec {
    pub s: f64,
    #[serde(with = "crate::jsonfloat")]
    pub p: f64,
    #[serde(with = "crate::jsonfloat")]
    pub q: f64,
    pub d: usize,
    pub m: usize,
}

impl SmoothnessSpec {
    pub fn new(s: f64, p: f64, q: f64, d: usize, m: usize) -> Result<Self> {
        let spec = Self { s, p, q, d, m };
        spec.validate()?;
        Ok(spec)
    }

    /// Cantor function: `B^{log 2/log 3}_{∞,∞}` on `[0, 1]`.
    pub fn cantor() -> Self {
        Self { s: 2f64.ln() / 3f64.ln(), p: f64::INFINITY, q: f64::INFINITY, d: 1, m: 2 }
    }

    /// `1/ln(x/2)`: `B^{3/2}_{1,1}` on `[0, 1]`.
    pub fn log_singular() -> Self {
        Self { s: 1.5, p: 1.0, q: 1.0, d: 1, m: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSmoothness(msg));
        if !(self.s > 0.0) || !self.s.is_finite() {
            return bad(format!("s must be positive and finite, got {}", self.s));
        }
        if !(self.p > 0.0) || !(self.q > 0.0) {
            return bad(format!("p and q must lie in (0, ∞], got p = {}, q = {}", self.p, self.q));
        }
        if self.d == 0 || self.m == 0 {
            return bad("d and m must be at least 1".into());
        }
        if self.delta() >= self.s {
            return bad(format!("need d/p < s, got d/p = {} and s = {}", self.delta(), self.s));
        }
        let cap = (self.m as f64).min(self.m as f64 - 1.0 + 1.0 / self.p);
        if self.s >= cap {
            return bad(format!("need s < min(m, m - 1 + 1/p) = {cap}, got s = {}", self.s));
        }
        Ok(())
    }

    /// `δ = d/p`, zero for `p = ∞`.
    pub fn delta(&self) -> f64 {
        if self.p.is_infinite() {
            0.0
        } else {
            self.d as f64 / self.p
        }
    }

    /// `ν⁻¹ = 2δ/(s − δ)`, taken as `0` in the `δ = 0` limit.
    pub fn nu_inv(&self) -> f64 {
        let delta = self.delta();
        if delta == 0.0 {
            0.0
        } else {
            2.0 * delta / (self.s - delta)
        }
    }

    pub fn nu(&self) -> f64 {
        let inv = self.nu_inv();
        if inv == 0.0 {
            f64::INFINITY
        } else {
            1.0 / inv
        }
    }

    /// Growth exponent of the weight bound, `ξ = min(1, ν⁻¹ + d⁻¹)`.
    pub fn xi(&self) -> f64 {
        (self.nu_inv() + 1.0 / self.d as f64).min(1.0)
    }

    /// Minimax exponent `s/(2s + d)`.
    pub fn rate_exponent(&self) -> f64 {
        self.s / (2.0 * self.s + self.d as f64)
    }
}

/// How nonzero and total parameter counts are tallied for the weight `π₂ = S/T`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Counting {
    /// `S = (L−1) W₀² N + N`, `T` = all weights and biases.
    #[default]
    Canonical,
    /// `S = L W₀² N + N`, `T` = weights only. Reproduces the published mixture weights to <1%.
    TableCompat,
}

/// Network geometry prescribed for sample size `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub n: u64,
    pub d: usize,
    pub s: f64,
    /// `N_n`
    pub units: u64,
    /// `W₀`
    pub base_width: u64,
    /// `L_n`
    pub depth: u64,
    /// `W_n = N_n W₀`
    pub width: u64,
    /// `S_n`
    pub sparsity: u64,
    /// `B_n`
    #[serde(with = "crate::jsonfloat")]
    pub bound: f64,
    /// Dense parameter count of the `(d, W, …, W, 1)` network.
    pub total_params: u64,
    /// `ε_n`
    #[serde(with = "crate::jsonfloat")]
    pub eps: f64,
    #[serde(with = "crate::jsonfloat")]
    pub tau: f64,
    pub c_dm: f64,
    #[serde(with = "crate::jsonfloat")]
    pub xi: f64,
    #[serde(with = "crate::jsonfloat")]
    pub nu: f64,
}

impl ArchSpec {
    pub fn sparsity_count(&self, counting: Counting) -> u64 {
        match counting {
            Counting::Canonical => self.sparsity,
            Counting::TableCompat => self.depth * self.base_width.pow(2) * self.units + self.units,
        }
    }

    pub fn param_count(&self, counting: Counting) -> u64 {
        match counting {
            Counting::Canonical => self.total_params,
            Counting::TableCompat => {
                let (d, w, l) = (self.d as u64, self.width, self.depth);
                d * w + (l - 1) * w * w + w
            }
        }
    }

    /// `S/T` under the chosen counting convention.
    pub fn sparsity_ratio(&self, counting: Counting) -> f64 {
        self.sparsity_count(counting) as f64 / self.param_count(counting) as f64
    }

    /// `n ε_n²`
    pub fn n_eps_sq(&self) -> f64 {
        self.n as f64 * self.eps * self.eps
    }

    /// `ln` of the largest admissible spike threshold `ε_n / (72 L (B∨1)^{L−1} (W+1)^L)`.
    pub fn ln_spike_threshold(&self) -> f64 {
        let l = self.depth as f64;
        self.eps.ln() - 72f64.ln() - l.ln() - (l - 1.0) * self.bound.max(1.0).ln() - l * (self.width as f64 + 1.0).ln()
    }

    /// `ln` of the sup-norm perturbation factor `L (B∨1)^{L−1} (W+1)^L`.
    pub fn ln_lipschitz_factor(&self) -> f64 {
        ln_lipschitz_factor(self.depth, self.width, self.bound)
    }
}

/// `W₀ = 6dm(m+2) + 2d`.
pub fn base_width(d: usize, m: usize) -> u64 {
    let (d, m) = (d as u64, m as u64);
    6 * d * m * (m + 2) + 2 * d
}

/// `c_(d,m) = 1 + 2de(2e)^m / √m`.
pub fn c_dm(d: usize, m: usize) -> f64 {
    let e = std::f64::consts::E;
    1.0 + 2.0 * d as f64 * e * (2.0 * e).powi(m as i32) / (m as f64).sqrt()
}

/// Contraction rate `n^{−s/(2s+d)} (ln n)^{3/2}`.
pub fn contraction_rate(spec: &SmoothnessSpec, n: u64) -> f64 {
    let n = n as f64;
    n.powf(-spec.rate_exponent()) * n.ln().powf(1.5)
}

fn dense_param_count(d: u64, width: u64, depth: u64) -> u64 {
    // (d, W, …, W, 1): first layer, L−1 hidden-to-hidden layers, scalar output
    (d * width + width) + (depth - 1) * (width * width + width) + (width + 1)
}

/// Evaluates the architecture rules for sample size `n`, with `B_n = c_B N_n^ξ`.
pub fn design_architecture(spec: &SmoothnessSpec, n: u64, c_b: f64) -> Result<ArchSpec> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
    }
    if !(c_b > 0.0) || !c_b.is_finite() {
        return Err(Error::InvalidArgument(format!("bound constant must be positive, got {c_b}")));
    }
    let d = spec.d as f64;
    let units = (n as f64).powf(d / (2.0 * spec.s + d)).ceil() as u64;
    let w0 = base_width(spec.d, spec.m);
    let ln_n_units = (units as f64).ln();
    let ln_tau = -(spec.s / d) * ln_n_units - ln_n_units.ln();
    let c = c_dm(spec.d, spec.m);
    let dm = spec.d.max(spec.m);
    // log₂(3^{d∨m} / (τ c)) + 5
    let inner = (dm as f64 * 3f64.ln() - ln_tau - c.ln()) / LN_2 + 5.0;
    let depth_factor = (dm as f64).log2().ceil() as u64;
    let depth = 3 + 2 * (inner.ceil().max(0.0) as u64) * depth_factor;
    let width = units * w0;
    let sparsity = (depth - 1) * w0 * w0 * units + units;
    let xi = spec.xi();
    Ok(ArchSpec {
        n,
        d: spec.d,
        s: spec.s,
        units,
        base_width: w0,
        depth,
        width,
        sparsity,
        bound: c_b * (units as f64).powf(xi),
        total_params: dense_param_count(spec.d as u64, width, depth),
        eps: contraction_rate(spec, n),
        tau: ln_tau.exp(),
        c_dm: c,
        xi,
        nu: spec.nu(),
    })
}

/// Which reading of the Gaussian-mixture hyperparameters to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureVariant {
    /// Experimental setting: `σ₂² = B²/(2(K₀+1) n ε²)`, `σ₁` from the lower-bound
    /// expression with its argument floored at machine epsilon. Reproduces the published tables.
    #[default]
    Experiment,
    /// `σ₂² = B²/(2 K₀ n ε²)` and `σ₁` placed strictly inside the admissible interval,
    /// so the spike condition holds.
    Theorem,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecipe {
    pub k0: f64,
    pub variant: MixtureVariant,
    pub counting: Counting,
}

impl Default for MixtureRecipe {
    fn default() -> Self {
        Self { k0: 5.0, variant: MixtureVariant::Experiment, counting: Counting::Canonical }
    }
}

/// Admissible interval for `ln σ₁`: lower end is `-∞` when the lower constraint is vacuous.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeScaleInterval {
    pub ln_lower: f64,
    pub ln_upper: f64,
}

/// Bounds on `σ₁` that keep `1 − u_n` between `(S/T) η` and `S/T`:
/// `a / Ψ((π₂/π₁)[η/2 − Q(a/σ₂)]) ≤ σ₁ < a / Ψ((π₂/π₁)[1/2 − Q(a/σ₂)])`, `Ψ = Q⁻¹`.
pub fn spike_scale_interval(ln_a: f64, sigma2: f64, pi1: f64, pi2: f64, eta: f64) -> Result<SpikeScaleInterval> {
    let ln_odds = (pi2 / pi1).ln();
    let ln_x2 = ln_a - sigma2.ln();
    // 1/2 − Q(x) without cancellation
    let ln_upper_arg = ln_odds + special::ln_half_central_from_ln(ln_x2);
    if ln_upper_arg >= -LN_2 {
        return Err(Error::InvalidArgument("spike interval upper argument is not below 1/2".into()));
    }
    let ln_upper = ln_a - special::isf_from_ln(ln_upper_arg).ln();
    let lower_arg = (pi2 / pi1) * (0.5 * eta - special::sf(ln_x2.exp()));
    let ln_lower = if lower_arg <= 0.0 { f64::NEG_INFINITY } else { ln_a - special::isf(lower_arg).ln() };
    Ok(SpikeScaleInterval { ln_lower, ln_upper })
}

/// Gaussian-mixture shrinkage hyperparameters for a design.
pub fn mixture_hyperparams(arch: &ArchSpec, recipe: &MixtureRecipe) -> Result<MixturePriorSpec> {
    let k0 = recipe.k0;
    if !(k0 > 4.0) {
        return Err(Error::InvalidArgument(format!("K0 must exceed 4, got {k0}")));
    }
    let pi2 = arch.sparsity_ratio(recipe.counting);
    let pi1 = 1.0 - pi2;
    if !(pi2 > 0.0 && pi2 < 1.0) {
        return Err(Error::InvalidArgument(format!("mixture weight S/T = {pi2} is not in (0, 1)")));
    }
    let s_count = arch.sparsity_count(recipe.counting) as f64;
    let ne2 = arch.n_eps_sq();
    let eta = (-k0 * ne2 / s_count).exp();
    let ln_a = arch.ln_spike_threshold();
    let divisor = match recipe.variant {
        MixtureVariant::Experiment => 2.0 * (k0 + 1.0) * ne2,
        MixtureVariant::Theorem => 2.0 * k0 * ne2,
    };
    let sigma2 = arch.bound / divisor.sqrt();
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!("slab scale σ₂ = {sigma2} is not positive")));
    }
    let log_sigma1 = match recipe.variant {
        MixtureVariant::Experiment => {
            let x2 = (ln_a - sigma2.ln()).exp();
            let raw = (pi2 / pi1) * (0.5 * eta - special::sf(x2));
            // For realistic designs η/2 < Q(a/σ₂) ≈ 1/2 and the argument is negative;
            // flooring at machine epsilon gives Q⁻¹ ≈ 8.1, the published spike scales.
            let arg = raw.max(f64::EPSILON);
            if arg >= 0.5 {
                return Err(Error::InvalidArgument(format!("spike-scale argument {arg} is not below 1/2")));
            }
            ln_a - special::isf(arg).ln()
        }
        MixtureVariant::Theorem => {
            let iv = spike_scale_interval(ln_a, sigma2, pi1, pi2, eta)?;
            if iv.ln_lower.is_finite() {
                0.5 * (iv.ln_lower + iv.ln_upper)
            } else {
                iv.ln_upper - LN_2
            }
        }
    };
    MixturePriorSpec::new(ln_a, eta, log_sigma1, sigma2, pi1, pi2, arch.bound, k0)
}

/// Constants of the shrinkage-condition check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// `K` in `η_n = exp(−K n ε² / S)`.
    pub k: f64,
    /// `K₀` in the support condition.
    pub k0: f64,
    /// Constant `C` in `−ln g(B) ≤ C (ln n)²`.
    pub tail_constant: f64,
    /// The support condition is `v_n ≤ tol · exp(−K₀ n ε²)`.
    pub support_tol: f64,
    pub counting: Counting,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { k: 5.0, k0: 5.0, tail_constant: 10.0, support_tol: 1.0, counting: Counting::Canonical }
    }
}

/// Numbers behind the three shrinkage conditions at one design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub density: String,
    pub n: u64,
    #[serde(with = "crate::jsonfloat")]
    pub ln_a: f64,
    /// `u_n = ∫_{−a}^{a} g`
    #[serde(with = "crate::jsonfloat")]
    pub u_n: f64,
    /// `ln(1 − u_n)`
    #[serde(with = "crate::jsonfloat")]
    pub ln_one_minus_u: f64,
    /// `S/T`
    #[serde(with = "crate::jsonfloat")]
    pub sparsity_ratio: f64,
    /// `exp(−K n ε²/S)`
    #[serde(with = "crate::jsonfloat")]
    pub eta: f64,
    /// `S/T − (1 − u_n)`, computed without cancellation; must be `> 0`.
    #[serde(with = "crate::jsonfloat")]
    pub spike_upper_gap: f64,
    /// `(1 − u_n) − (S/T) η`; must be `≥ 0`.
    #[serde(with = "crate::jsonfloat")]
    pub spike_lower_gap: f64,
    /// `−ln g(B_n)`
    #[serde(with = "crate::jsonfloat")]
    pub tail_lhs: f64,
    /// `C (ln n)²`
    #[serde(with = "crate::jsonfloat")]
    pub tail_rhs: f64,
    /// `ln v_n`, `v_n = ∫_{|t|>B} g`
    #[serde(with = "crate::jsonfloat")]
    pub ln_v_n: f64,
    /// `v_n` (zero when it underflows)
    #[serde(with = "crate::jsonfloat")]
    pub v_n: f64,
    /// `ln(tol) − K₀ n ε²`
    #[serde(with = "crate::jsonfloat")]
    pub support_rhs_ln: f64,
    pub pass_spike: bool,
    pub pass_tail: bool,
    pub pass_support: bool,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.pass_spike && self.pass_tail && self.pass_support
    }
}

fn spot_check_shape(g: &dyn SymmetricDensity, bound: f64) -> Result<()> {
    let mut prev = g.ln_pdf(0.0);
    for i in 1..=200 {
        let t = 3.0 * bound * i as f64 / 200.0;
        let (right, left) = (g.ln_pdf(t), g.ln_pdf(-t));
        if right.is_nan() || left.is_nan() {
            return Err(Error::Asymmetric(format!("log-density is NaN at ±{t}")));
        }
        let scale = right.abs().max(1.0);
        if right != left && (right - left).abs() > 1e-10 * scale {
            return Err(Error::Asymmetric(format!("g({t}) ≠ g(−{t}): {right} vs {left}")));
        }
        if right > prev + 1e-10 * scale {
            return Err(Error::Asymmetric(format!("density increases on t > 0 near t = {t}")));
        }
        prev = right;
    }
    Ok(())
}

/// Spike, tail and support conditions for a product shrinkage prior with marginal `g`
/// at the threshold `a_n` and bound `B_n` of `arch`.
pub fn check_shrinkage_conditions(g: &dyn SymmetricDensity, arch: &ArchSpec, opts: &CheckOptions) -> Result<ConditionReport> {
    if !(opts.k > 4.0 && opts.k0 > 4.0) {
        return Err(Error::InvalidArgument(format!("K and K0 must exceed 4, got {} and {}", opts.k, opts.k0)));
    }
    spot_check_shape(g, arch.bound)?;
    let ratio = arch.sparsity_ratio(opts.counting);
    let s_count = arch.sparsity_count(opts.counting) as f64;
    let ne2 = arch.n_eps_sq();
    let eta = (-opts.k * ne2 / s_count).exp();
    let ln_a = arch.ln_spike_threshold();

    let central = g.tail_mass(ln_a.exp())?;
    let spike_upper_gap = central.gap_below(ratio);
    let spike_lower_gap = -central.gap_below(ratio * eta);

    let ln_n = (arch.n as f64).ln();
    let tail_lhs = -g.ln_pdf(arch.bound);
    let tail_rhs = opts.tail_constant * ln_n * ln_n;

    let outside = g.tail_mass(arch.bound)?;
    let ln_v_n = outside.ln_value();
    let support_rhs_ln = opts.support_tol.ln() - opts.k0 * ne2;

    Ok(ConditionReport {
        density: g.name().to_string(),
        n: arch.n,
        ln_a,
        u_n: 1.0 - central.value(),
        ln_one_minus_u: central.ln_value(),
        sparsity_ratio: ratio,
        eta,
        spike_upper_gap,
        spike_lower_gap,
        tail_lhs,
        tail_rhs,
        ln_v_n,
        v_n: ln_v_n.exp(),
        support_rhs_ln,
        pass_spike: spike_upper_gap > 0.0 && spike_lower_gap >= 0.0,
        pass_tail: tail_lhs <= tail_rhs,
        pass_support: ln_v_n <= support_rhs_ln,
    })
}

/// `ln(L (B∨1)^{L−1} (W+1)^L)`.
pub fn ln_lipschitz_factor(depth: u64, width: u64, bound: f64) -> f64 {
    let l = depth as f64;
    l.ln() + (l - 1.0) * bound.max(1.0).ln() + l * (width as f64 + 1.0).ln()
}

fn check_covering_args(depth: u64, width: u64, bound: f64, delta: f64) -> Result<()> {
    if depth == 0 || width == 0 {
        return Err(Error::InvalidArgument("depth and width must be positive".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!("bound must be positive, got {bound}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// Metric-entropy bound `(S+1) ln(2 δ⁻¹ L (B∨1)^L (W+1)^{2L})` for the sparse ReLU class.
pub fn covering_bound(depth: u64, width: u64, sparsity: u64, bound: f64, delta: f64) -> Result<f64> {
    check_covering_args(depth, width, bound, delta)?;
    let l = depth as f64;
    let inner = LN_2 - delta.ln() + l.ln() + l * bound.max(1.0).ln() + 2.0 * l * (width as f64 + 1.0).ln();
    Ok((sparsity as f64 + 1.0) * inner)
}

/// Same bound for the class whose thresholded parameters `θ̃(a)` lie in the sparse class;
/// valid only for `δ ≥ 2 a L (B∨1)^{L−1} (W+1)^L`.
pub fn covering_bound_truncated(depth: u64, width: u64, sparsity: u64, bound: f64, a: f64, delta: f64) -> Result<f64> {
    check_covering_args(depth, width, bound, delta)?;
    if !(a >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {a}")));
    }
    let ln_min_delta = LN_2 + a.ln() + ln_lipschitz_factor(depth, width, bound);
    // the designed threshold hits the floor exactly; allow for rounding in the log sums
    let slack = 1e-12 * ln_min_delta.abs().max(1.0);
    if delta.ln() < ln_min_delta - slack {
        return Err(Error::DeltaTooSmall { min_delta: ln_min_delta.exp(), ln_min_delta });
    }
    covering_bound(depth, width, sparsity, bound, delta)
}

/// Covering bound of a design at `δ = ε_n/36` against `n ε_n²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    #[serde(with = "crate::jsonfloat")]
    pub delta: f64,
    #[serde(with = "crate::jsonfloat")]
    pub bound: f64,
    #[serde(with = "crate::jsonfloat")]
    pub n_eps_sq: f64,
    #[serde(with = "crate::jsonfloat")]
    pub ratio: f64,
}

pub fn covering_report(arch: &ArchSpec, delta: f64) -> Result<CoveringReport> {
    let bound = covering_bound(arch.depth, arch.width, arch.sparsity, arch.bound, delta)?;
    let ne2 = arch.n_eps_sq();
    Ok(CoveringReport { delta, bound, n_eps_sq: ne2, ratio: bound / ne2 })
}
