//! Log-densities and samplers for the parameter priors: spike-and-slab with a
//! uniform slab, the two-component Gaussian shrinkage mixture, generic
//! product priors built from a symmetric marginal, and the Poisson/exponential
//! prior over architectures.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{self, ln_add_exp, ln_sum_exp, LN_2, LN_SQRT_2PI};

/// Two-sided tail mass `P(|θ| > a)` written as `bulk + e^{ln_plus} − e^{ln_minus}`.
///
/// Mixture components whose scale dwarfs `a` contribute their whole weight to `bulk`
/// and the (tiny) central mass to `ln_minus`; the rest contribute their tails to
/// `ln_plus`. Comparisons against a threshold equal to `bulk` then resolve at the
/// scale of the small terms instead of at double rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailMass {
    pub bulk: f64,
    pub ln_plus: f64,
    pub ln_minus: f64,
}

impl TailMass {
    pub fn small(ln_value: f64) -> Self {
        Self { bulk: 0.0, ln_plus: ln_value, ln_minus: f64::NEG_INFINITY }
    }

    pub fn value(&self) -> f64 {
        self.bulk + self.ln_plus.exp() - self.ln_minus.exp()
    }

    pub fn ln_value(&self) -> f64 {
        if self.bulk == 0.0 && self.ln_minus == f64::NEG_INFINITY {
            self.ln_plus
        } else {
            self.value().ln()
        }
    }

    /// `threshold − value`, exact in sign even when the small terms are below one ulp of `bulk`.
    pub fn gap_below(&self, threshold: f64) -> f64 {
        let head = threshold - self.bulk;
        let (plus, minus) = (self.ln_plus.exp(), self.ln_minus.exp());
        let gap = head + minus - plus;
        if gap == 0.0 && head == 0.0 && self.ln_minus != self.ln_plus {
            // both small terms underflowed; fall back to the log comparison
            return if self.ln_minus > self.ln_plus { f64::MIN_POSITIVE } else { -f64::MIN_POSITIVE };
        }
        gap
    }
}

/// A continuous density on ℝ, symmetric about zero and nonincreasing on `t > 0`.
pub trait SymmetricDensity: Send + Sync {
    fn name(&self) -> &str;

    fn ln_pdf(&self, t: f64) -> f64;

    /// `d/dt ln g(t)`.
    fn d_ln_pdf(&self, t: f64) -> f64;

    /// `P(|θ| > a)`; the default integrates the density numerically.
    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        quadrature_tail_mass(|t| self.ln_pdf(t), a)
    }
}

impl<G: SymmetricDensity + ?Sized> SymmetricDensity for Box<G> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn ln_pdf(&self, t: f64) -> f64 {
        (**self).ln_pdf(t)
    }
    fn d_ln_pdf(&self, t: f64) -> f64 {
        (**self).d_ln_pdf(t)
    }
    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        (**self).tail_mass(a)
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if !diff.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
        }
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return Ok(left + right + diff / 15.0);
        }
        Ok(step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)? + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Adaptive Simpson over `[lo, hi]`, splitting the range into equal panels first so
/// narrow features are not stepped over.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, tol: f64) -> Result<f64> {
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = lo + k as f64 * width;
        total += adaptive_simpson(&f, a, a + width, tol / panels as f64)?;
    }
    Ok(total)
}

fn quadrature_tail_mass<F: Fn(f64) -> f64>(ln_pdf: F, a: f64) -> Result<TailMass> {
    if !(a >= 0.0) {
        return Err(Error::InvalidArgument(format!("tail threshold must be nonnegative, got {a}")));
    }
    if a > 0.0 {
        let central = 2.0 * integrate(|t| ln_pdf(t).exp(), 0.0, a, 16, 1e-14)?;
        if central <= 0.5 {
            return Ok(TailMass { bulk: 1.0, ln_plus: f64::NEG_INFINITY, ln_minus: central.ln() });
        }
    }
    // ∫_a^∞ g(t) dt with t = a + u/(1−u), scaled by g(a) to stay in range
    let anchor = ln_pdf(a);
    if anchor == f64::NEG_INFINITY {
        return Ok(TailMass::small(f64::NEG_INFINITY));
    }
    let integrand = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let t = a + u / (1.0 - u);
        let jac = 1.0 / ((1.0 - u) * (1.0 - u));
        let v = (ln_pdf(t) - anchor).exp() * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let scaled = integrate(integrand, 0.0, 1.0, 64, 1e-13)?;
    Ok(TailMass::small(LN_2 + anchor + scaled.ln()))
}

/// Gaussian-mixture shrinkage marginal
/// `g(t) = π₁ φ(t/σ₁)/σ₁ + π₂ φ(t/σ₂)/σ₂`, together with the design quantities it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePriorSpec {
    /// `ln a_n`
    pub log_a: f64,
    pub eta: f64,
    /// `ln σ₁`; the spike scale underflows in linear form for large designs.
    pub log_sigma1: f64,
    pub sigma2: f64,
    pub pi1: f64,
    pub pi2: f64,
    /// `B_n`
    pub bound: f64,
    pub k0: f64,
}

impl MixturePriorSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(log_a: f64, eta: f64, log_sigma1: f64, sigma2: f64, pi1: f64, pi2: f64, bound: f64, k0: f64) -> Result<Self> {
        let spec = Self { log_a, eta, log_sigma1, sigma2, pi1, pi2, bound, k0 };
        spec.validate()?;
        Ok(spec)
    }

    /// Mixture with only the weights and scales set; design fields are left neutral.
    pub fn from_components(pi1: f64, log_sigma1: f64, sigma2: f64) -> Result<Self> {
        Self::new(log_sigma1, 1.0, log_sigma1, sigma2, pi1, 1.0 - pi1, f64::INFINITY, 5.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi1 >= 0.0 && self.pi2 >= 0.0 && (self.pi1 + self.pi2 - 1.0).abs() < 1e-12) {
            return Err(Error::InvalidArgument(format!("mixture weights {} and {} must be nonnegative and sum to 1", self.pi1, self.pi2)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() || self.log_sigma1.is_nan() {
            return Err(Error::InvalidArgument("mixture scales must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma1(&self) -> f64 {
        self.log_sigma1.exp()
    }

    fn components(&self) -> [(f64, f64); 2] {
        [(self.pi1.ln(), self.log_sigma1), (self.pi2.ln(), self.sigma2.ln())]
    }

    /// `ln(w) − ln σ − z²/2 − ln√(2π)` with `z² = exp(2(ln|t| − ln σ))`.
    fn component_terms(&self, t: f64) -> [f64; 2] {
        let ln_abs = t.abs().ln();
        self.components().map(|(ln_w, ln_sigma)| {
            if ln_w == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let z2 = (2.0 * (ln_abs - ln_sigma)).exp();
            ln_w - ln_sigma - 0.5 * z2 - LN_SQRT_2PI
        })
    }
}

/// `ln g(θ)` for the Gaussian mixture, finite for every finite `θ`.
pub fn mixture_log_density(theta: f64, spec: &MixturePriorSpec) -> f64 {
    let [a, b] = spec.component_terms(theta);
    ln_add_exp(a, b)
}

impl SymmetricDensity for MixturePriorSpec {
    fn name(&self) -> &str {
        "mixture"
    }

    fn ln_pdf(&self, t: f64) -> f64 {
        mixture_log_density(t, self)
    }

    fn d_ln_pdf(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let terms = self.component_terms(t);
        let total = ln_add_exp(terms[0], terms[1]);
        let ln_abs = t.abs().ln();
        // −Σ r_k t/σ_k², each product formed in log space
        let mag: f64 =
            terms.iter().zip(self.components()).map(|(&term, (_, ln_sigma))| (term - total + ln_abs - 2.0 * ln_sigma).exp()).sum();
        -t.signum() * mag
    }

    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        if !(a >= 0.0) {
            return Err(Error::InvalidArgument(format!("tail threshold must be nonnegative, got {a}")));
        }
        let ln_a = a.ln();
        let mut bulk = 0.0;
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (ln_w, ln_sigma) in self.components() {
            if ln_w == f64::NEG_INFINITY {
                continue;
            }
            let ln_x = ln_a - ln_sigma;
            if ln_x < -LN_2 {
                bulk += ln_w.exp();
                minus.push(ln_w + LN_2 + special::ln_half_central_from_ln(ln_x));
            } else {
                plus.push(ln_w + LN_2 + special::ln_sf(ln_x.exp()));
            }
        }
        Ok(TailMass { bulk, ln_plus: ln_sum_exp(&plus), ln_minus: ln_sum_exp(&minus) })
    }
}

/// Draws from the mixture: component 2 with probability `π₂`.
pub fn mixture_sample(spec: &MixturePriorSpec, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mixture_sample_with(spec, count, &mut rng)
}

pub fn mixture_sample_with<R: Rng + ?Sized>(spec: &MixturePriorSpec, count: usize, rng: &mut R) -> Vec<f64> {
    let sigma1 = spec.sigma1();
    (0..count)
        .map(|_| {
            let slab = rng.random::<f64>() < spec.pi2;
            let z: f64 = rng.sample(StandardNormal);
            if slab {
                spec.sigma2 * z
            } else {
                sigma1 * z
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub sd: f64,
}

impl SymmetricDensity for Gaussian {
    fn name(&self) -> &str {
        "gauss"
    }
    fn ln_pdf(&self, t: f64) -> f64 {
        special::std_normal_ln_pdf(t / self.sd) - self.sd.ln()
    }
    fn d_ln_pdf(&self, t: f64) -> f64 {
        -t / (self.sd * self.sd)
    }
    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        let x = a / self.sd;
        if x < 0.5 {
            Ok(TailMass { bulk: 1.0, ln_plus: f64::NEG_INFINITY, ln_minus: LN_2 + special::half_central(x).ln() })
        } else {
            Ok(TailMass::small(LN_2 + special::ln_sf(x)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Laplace {
    pub scale: f64,
}

impl SymmetricDensity for Laplace {
    fn name(&self) -> &str {
        "laplace"
    }
    fn ln_pdf(&self, t: f64) -> f64 {
        -t.abs() / self.scale - (2.0 * self.scale).ln()
    }
    fn d_ln_pdf(&self, t: f64) -> f64 {
        -t.signum() / self.scale * if t == 0.0 { 0.0 } else { 1.0 }
    }
    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        let x = a / self.scale;
        if x < 0.5 {
            Ok(TailMass { bulk: 1.0, ln_plus: f64::NEG_INFINITY, ln_minus: (-(-x).exp_m1()).ln() })
        } else {
            Ok(TailMass::small(-x))
        }
    }
}

/// Uniform density on `[−B, B]` (the spike-and-slab slab on its own).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformSlab {
    pub half_width: f64,
}

impl SymmetricDensity for UniformSlab {
    fn name(&self) -> &str {
        "uniform-slab"
    }
    fn ln_pdf(&self, t: f64) -> f64 {
        if t.abs() <= self.half_width {
            -(2.0 * self.half_width).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn d_ln_pdf(&self, _t: f64) -> f64 {
        0.0
    }
    fn tail_mass(&self, a: f64) -> Result<TailMass> {
        if a >= self.half_width {
            Ok(TailMass::small(f64::NEG_INFINITY))
        } else {
            Ok(TailMass { bulk: 1.0, ln_plus: f64::NEG_INFINITY, ln_minus: (a / self.half_width).ln() })
        }
    }
}

pub const DENSITY_NAMES: [&str; 4] = ["mixture", "gauss", "laplace", "uniform-slab"];

/// Looks up a marginal by its registered name. `scale` parameterizes `gauss` and
/// `laplace`; the slab half-width and mixture come from `mixture`.
pub fn density_by_name(name: &str, mixture: &MixturePriorSpec, scale: f64) -> Result<Box<dyn SymmetricDensity>> {
    match name {
        "mixture" => Ok(Box::new(mixture.clone())),
        "gauss" => Ok(Box::new(Gaussian { sd: scale })),
        "laplace" => Ok(Box::new(Laplace { scale })),
        "uniform-slab" => Ok(Box::new(UniformSlab { half_width: mixture.bound })),
        other => Err(Error::UnknownDensity(other.to_string())),
    }
}

/// `Σ_j ln g(θ_j)` for the product prior.
pub fn shrinkage_log_prior<G: SymmetricDensity + ?Sized>(theta: &[f64], g: &G) -> Result<f64> {
    let mut total = 0.0;
    for &t in theta {
        let v = g.ln_pdf(t);
        if v.is_nan() {
            return Err(Error::NonFinite(format!("log-density of {} is NaN at {t}", g.name())));
        }
        total += v;
    }
    Ok(total)
}

/// Log-prior over a full parameter vector, as consumed by the samplers and the ELBO.
pub trait LogPrior: Sync {
    fn ln_density(&self, theta: &[f64]) -> f64;

    /// Adds `∇ ln π(θ)` into `grad`.
    fn accumulate_grad(&self, theta: &[f64], grad: &mut [f64]);
}

/// Independent coordinates with a common symmetric marginal.
pub struct ProductPrior<G>(pub G);

impl<G: SymmetricDensity> LogPrior for ProductPrior<G> {
    fn ln_density(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|&t| self.0.ln_pdf(t)).sum()
    }
    fn accumulate_grad(&self, theta: &[f64], grad: &mut [f64]) {
        for (g, &t) in grad.iter_mut().zip(theta) {
            *g += self.0.d_ln_pdf(t);
        }
    }
}

/// Independent Gaussians with per-coordinate means and standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl LogPrior for DiagonalGaussian {
    fn ln_density(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(self.mean.iter().zip(&self.sd)).map(|(&t, (&m, &s))| special::std_normal_ln_pdf((t - m) / s) - s.ln()).sum()
    }
    fn accumulate_grad(&self, theta: &[f64], grad: &mut [f64]) {
        for ((g, &t), (&m, &s)) in grad.iter_mut().zip(theta).zip(self.mean.iter().zip(&self.sd)) {
            *g -= (t - m) / (s * s);
        }
    }
}

/// Improper constant prior.
pub struct FlatPrior;

impl LogPrior for FlatPrior {
    fn ln_density(&self, _theta: &[f64]) -> f64 {
        0.0
    }
    fn accumulate_grad(&self, _theta: &[f64], _grad: &mut [f64]) {}
}

/// Spike-and-slab with exactly `S` active coordinates out of `T`, slab `U[−B, B]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabSpec {
    pub total: u64,
    pub active: u64,
    pub bound: f64,
}

impl SpikeSlabSpec {
    pub fn new(total: u64, active: u64, bound: f64) -> Result<Self> {
        if active == 0 || active > total {
            return Err(Error::InvalidArgument(format!("need 0 < S ≤ T, got S = {active}, T = {total}")));
        }
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument(format!("slab half-width must be positive, got {bound}")));
        }
        Ok(Self { total, active, bound })
    }
}

/// Active set (0-based, sorted) and the slab values on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseDraw {
    pub gamma: Vec<u64>,
    pub values: Vec<f64>,
}

impl SparseDraw {
    pub fn to_dense(&self, total: usize) -> Vec<f64> {
        let mut theta = vec![0.0; total];
        for (&j, &v) in self.gamma.iter().zip(&self.values) {
            theta[j as usize] = v;
        }
        theta
    }
}

/// `−ln C(T, S) − S ln(2B)`, or `−∞` if an active value leaves the slab.
pub fn spike_slab_log_density(draw: &SparseDraw, spec: &SpikeSlabSpec) -> Result<f64> {
    if draw.gamma.len() as u64 != spec.active || draw.values.len() != draw.gamma.len() {
        return Err(Error::ShapeMismatch(format!(
            "draw has {} indices and {} values, spec expects {} active coordinates",
            draw.gamma.len(),
            draw.values.len(),
            spec.active
        )));
    }
    if draw.gamma.windows(2).any(|w| w[0] >= w[1]) || draw.gamma.last().is_some_and(|&j| j >= spec.total) {
        return Err(Error::InvalidArgument("active set must be sorted, distinct and below T".into()));
    }
    if draw.values.iter().any(|v| !(v.abs() <= spec.bound)) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-special::ln_binomial(spec.total, spec.active) - spec.active as f64 * (2.0 * spec.bound).ln())
}

pub fn spike_slab_sample(spec: &SpikeSlabSpec, seed: u64) -> SparseDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spike_slab_sample_with(spec, &mut rng)
}

pub fn spike_slab_sample_with<R: Rng + ?Sized>(spec: &SpikeSlabSpec, rng: &mut R) -> SparseDraw {
    let mut gamma: Vec<u64> = index::sample(rng, spec.total as usize, spec.active as usize).into_iter().map(|j| j as u64).collect();
    gamma.sort_unstable();
    let values = gamma.iter().map(|_| rng.random_range(-spec.bound..=spec.bound)).collect();
    SparseDraw { gamma, values }
}

/// Rates of the adaptive architecture prior: zero-truncated Poisson on `N` and `L`,
/// exponential on `B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchPriorSpec {
    pub lambda: f64,
    pub rho: f64,
    pub beta: f64,
    /// `W₁ = 6dm(m+2) + 2d`
    pub base_width: u64,
}

impl ArchPriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.rho > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidArgument("λ, ρ and β must be positive".into()));
        }
        Ok(())
    }
}

/// `ln(rate^k / (k! (e^rate − 1)))`
pub fn ln_zero_truncated_poisson(k: u64, rate: f64) -> f64 {
    k as f64 * rate.ln() - crate::special::ln_gamma(k as f64 + 1.0) - rate.exp_m1().ln()
}

pub fn arch_prior_log_pmf(units: u64, depth: u64, bound: f64, spec: &ArchPriorSpec) -> Result<f64> {
    spec.validate()?;
    if units == 0 || depth == 0 || !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!("need N, L ≥ 1 and B > 0, got N = {units}, L = {depth}, B = {bound}")));
    }
    Ok(ln_zero_truncated_poisson(units, spec.lambda) + ln_zero_truncated_poisson(depth, spec.rho) + spec.beta.ln() - spec.beta * bound)
}

/// One draw from the architecture prior and the sparse class it indexes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDraw {
    pub units: u64,
    pub depth: u64,
    pub bound: f64,
    pub width: u64,
    pub sparsity: u64,
}

/// Inversion sampler; the scan stops once the remaining mass is below `1e-14`.
fn sample_zero_truncated_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut k = 1u64;
    loop {
        cumulative += ln_zero_truncated_poisson(k, rate).exp();
        if u <= cumulative || cumulative >= 1.0 - 1e-14 || k > 10_000 {
            return k;
        }
        k += 1;
    }
}

pub fn arch_prior_sample(spec: &ArchPriorSpec, seed: u64) -> Result<ArchDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    arch_prior_sample_with(spec, &mut rng)
}

pub fn arch_prior_sample_with<R: Rng + ?Sized>(spec: &ArchPriorSpec, rng: &mut R) -> Result<ArchDraw> {
    spec.validate()?;
    let units = sample_zero_truncated_poisson(spec.lambda, rng);
    let depth = sample_zero_truncated_poisson(spec.rho, rng);
    let u: f64 = rng.random();
    let bound = -(1.0 - u).ln() / spec.beta;
    let w1 = spec.base_width;
    Ok(ArchDraw { units, depth, bound, width: units * w1, sparsity: (depth - 1) * w1 * w1 * units + units })
}
