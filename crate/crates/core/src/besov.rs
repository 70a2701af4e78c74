//! Ground-truth regression functions, synthetic data, and numerical smoothness
//! diagnostics on `[0, 1]`.
//!
//! The two built-in targets are the Cantor function (Hölder of order
//! `log 2 / log 3`, not in any Sobolev space) and `x ↦ 1 / ln(x/2)`, which sits
//! in `B^{3/2}_{1,1}` but in no Hölder space. The modulus-of-smoothness and
//! Besov-norm routines are grid approximations intended for sanity checks
//! (finiteness, monotonicity, refinement stability); they do not certify
//! membership in a space.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Digit cap for the ternary expansion; 3^-64 is far below double resolution.
const CANTOR_MAX_DIGITS: usize = 64;

/// Anything that can be evaluated pointwise on `[0, 1]`.
pub trait ScalarFunction {
    fn value(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> ScalarFunction for F {
    fn value(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Cantor (Devil's staircase) function by scanning ternary digits.
pub fn eval_cantor(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("cantor function is defined on [0, 1], got {x}")));
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let mut rest = x;
    let mut value = 0.0;
    let mut scale = 0.5;
    for _ in 0..CANTOR_MAX_DIGITS {
        rest *= 3.0;
        let digit = rest.floor();
        rest -= digit;
        if digit >= 2.0 {
            value += scale;
        } else if digit >= 1.0 {
            // first ternary 1 lands on a flat piece of the staircase
            return Ok(value + scale);
        }
        scale *= 0.5;
    }
    Ok(value)
}

/// `1 / ln(x/2)` on `(0, 1]`, extended by `0` at the origin.
pub fn eval_log_singular(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("log-singular function is defined on [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (x / 2.0).ln())
}

/// Piecewise-linear function through user-supplied knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Empty("tabulated function needs at least one knot"));
        }
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} knots but {} values", xs.len(), ys.len())));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("knots must be strictly increasing".into()));
        }
        if ys.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("knots and values must be finite".into()));
        }
        Ok(Self { xs, ys })
    }

    /// Linear interpolation, constant beyond the outermost knots.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let hi = self.xs.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let w = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + w * (self.ys[hi] - self.ys[lo])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrueFunction {
    Cantor,
    LogSingular,
    UserTabulated(Tabulated),
}

impl TrueFunction {
    pub fn constant(c: f64) -> Self {
        TrueFunction::UserTabulated(Tabulated { xs: vec![0.0, 1.0], ys: vec![c, c] })
    }

    pub fn dim(&self) -> usize {
        1
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            TrueFunction::Cantor => eval_cantor(x),
            TrueFunction::LogSingular => eval_log_singular(x),
            TrueFunction::UserTabulated(t) => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Domain(format!("x = {x} outside [0, 1]")));
                }
                Ok(t.eval(x))
            }
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            TrueFunction::Cantor => "f1",
            TrueFunction::LogSingular => "f2",
            TrueFunction::UserTabulated(_) => "tabulated",
        }
    }
}

impl ScalarFunction for TrueFunction {
    /// Points outside `[0, 1]` are clamped; the difference operators never ask for them.
    fn value(&self, x: f64) -> f64 {
        self.eval(x.clamp(0.0, 1.0)).expect("clamped argument is in the domain")
    }
}

impl FromStr for TrueFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" | "cantor" => Ok(TrueFunction::Cantor),
            "f2" | "log-singular" | "logsingular" => Ok(TrueFunction::LogSingular),
            other => Err(Error::InvalidArgument(format!("unknown function `{other}` (expected f1 or f2)"))),
        }
    }
}

impl fmt::Display for TrueFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Regression sample `y_i = f(x_i) + ε_i`. Points are stored row-major (`n × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    d: usize,
    n: usize,
    seed: u64,
    noise_sd: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>, noise_sd: f64, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        if y.is_empty() {
            return Err(Error::Empty("dataset has no observations"));
        }
        if x.len() != y.len() * d {
            return Err(Error::ShapeMismatch(format!("{} inputs for {} responses in dimension {d}", x.len(), y.len())));
        }
        Ok(Self { d, x, y, noise_sd, seed })
    }

    /// No observations; the likelihood term of anything built on it is zero.
    pub fn empty(d: usize) -> Self {
        Self { d, x: Vec::new(), y: Vec::new(), noise_sd: 0.0, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    /// Reorders observations; used to check permutation invariance.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.y.len());
        for &i in order {
            x.extend_from_slice(self.point(i));
            y.push(self.y[i]);
        }
        Self { d: self.d, x, y, noise_sd: self.noise_sd, seed: self.seed }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        writeln!(out, "{},y", header.join(","))?;
        for (p, y) in self.points().zip(&self.y) {
            for v in p {
                write!(out, "{v},")?;
            }
            writeln!(out, "{y}")?;
        }
        Ok(())
    }

    /// Reads the CSV layout written by [`Dataset::write_csv`]; seed and noise level are not
    /// part of that format and come from the caller.
    pub fn read_csv<R: BufRead>(input: R, noise_sd: f64, seed: u64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("csv has no header"))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.last() != Some(&"y") || cols.len() < 2 {
            return Err(Error::InvalidArgument(format!("unexpected dataset header `{header}`")));
        }
        let d = cols.len() - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .trim()
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != d + 1 {
                return Err(Error::ShapeMismatch(format!("row has {} fields, header has {}", vals.len(), d + 1)));
            }
            x.extend_from_slice(&vals[..d]);
            y.push(vals[d]);
        }
        Self::new(d, x, y, noise_sd, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DatasetJson {
            d: self.d,
            n: self.len(),
            seed: self.seed,
            noise_sd: self.noise_sd,
            x: self.points().map(<[f64]>::to_vec).collect(),
            y: self.y.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetJson = serde_json::from_str(text)?;
        if doc.n != doc.y.len() || doc.x.len() != doc.n || doc.x.iter().any(|p| p.len() != doc.d) {
            return Err(Error::ShapeMismatch("dataset json fields disagree on n or d".into()));
        }
        Self::new(doc.d, doc.x.concat(), doc.y, doc.noise_sd, doc.seed)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Draws `x ~ U[0,1]` then `y = f(x) + N(0, noise_sd²)` from a single seeded stream.
pub fn generate_dataset<F: ScalarFunction + ?Sized>(f: &F, n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be nonnegative, got {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x
        .iter()
        .map(|&xi| {
            let eps: f64 = rng.sample(StandardNormal);
            let clean = f.value(xi);
            if noise_sd == 0.0 {
                clean
            } else {
                clean + noise_sd * eps
            }
        })
        .collect();
    Dataset::new(1, x, y, noise_sd, seed)
}

/// Root mean square `(n⁻¹ Σ v_i²)^{1/2}`.
pub fn empirical_norm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("empirical norm of an empty sample"));
    }
    let ss: f64 = values.iter().map(|v| v * v).sum();
    Ok((ss / values.len() as f64).sqrt())
}

/// `‖f − f₀‖_n` over the dataset's design points.
pub fn empirical_error<F: ScalarFunction + ?Sized>(fitted: &[f64], f0: &F, data: &Dataset) -> Result<f64> {
    if fitted.len() != data.len() {
        return Err(Error::ShapeMismatch(format!("{} fitted values for {} points", fitted.len(), data.len())));
    }
    let diff: Vec<f64> = fitted.iter().zip(data.points()).map(|(v, p)| v - f0.value(p[0])).collect();
    empirical_norm(&diff)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusGrid {
    pub t_grid: Vec<f64>,
    pub h_samples: usize,
    pub x_samples: usize,
}

impl Default for ModulusGrid {
    fn default() -> Self {
        Self::logarithmic(1e-3, 1.0, 32, 64, 512)
    }
}

impl ModulusGrid {
    pub fn logarithmic(t_min: f64, t_max: f64, t_points: usize, h_samples: usize, x_samples: usize) -> Self {
        let t_grid = if t_points == 1 {
            vec![t_min]
        } else {
            let (a, b) = (t_min.ln(), t_max.ln());
            (0..t_points).map(|i| (a + (b - a) * i as f64 / (t_points - 1) as f64).exp()).collect()
        };
        Self { t_grid, h_samples, x_samples }
    }

    /// Same t-range with every count doubled.
    pub fn refined(&self) -> Self {
        let lo = self.t_grid[0];
        let hi = *self.t_grid.last().unwrap();
        Self::logarithmic(lo, hi, 2 * self.t_grid.len(), 2 * self.h_samples, 2 * self.x_samples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.h_samples == 0 || self.x_samples < 2 {
            return Err(Error::InvalidArgument("modulus grid needs t points, h samples ≥ 1 and x samples ≥ 2".into()));
        }
        if self.t_grid[0] <= 0.0 || self.t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("t grid must be positive and strictly increasing".into()));
        }
        Ok(())
    }
}

fn check_exponent(p: f64, name: &str) -> Result<()> {
    if p > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, ∞], got {p}")))
    }
}

fn binomial_row(r: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for k in 1..=r {
        let prev = row[k - 1];
        row.push(prev * (r + 1 - k) as f64 / k as f64);
    }
    row
}

/// `L^p` norm of a function sampled on the quadrature grid: midpoint rule for finite `p`,
/// node maximum for `p = ∞`.
fn lp_norm_on_grid(values: impl Iterator<Item = f64>, p: f64, count: usize) -> f64 {
    if p.is_infinite() {
        values.fold(0.0, |m, v| m.max(v.abs()))
    } else {
        let s: f64 = values.map(|v| v.abs().powf(p)).sum();
        (s / count as f64).powf(1.0 / p)
    }
}

fn x_nodes(count: usize, p: f64) -> Vec<f64> {
    if p.is_infinite() {
        (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
    } else {
        (0..count).map(|i| (i as f64 + 0.5) / count as f64).collect()
    }
}

/// `‖f‖_p` on the grid used by the smoothness estimators.
pub fn lp_norm<F: ScalarFunction + ?Sized>(f: &F, p: f64, x_samples: usize) -> Result<f64> {
    check_exponent(p, "p")?;
    if x_samples < 2 {
        return Err(Error::InvalidArgument("need at least two quadrature points".into()));
    }
    let xs = x_nodes(x_samples, p);
    Ok(lp_norm_on_grid(xs.iter().map(|&x| f.value(x)), p, x_samples))
}

/// `‖Δ_h^r f‖_p` with the difference set to zero where `x + r h` leaves `[0, 1]`.
fn difference_norm<F: ScalarFunction + ?Sized>(f: &F, coeffs: &[f64], h: f64, p: f64, xs: &[f64]) -> f64 {
    let r = coeffs.len() - 1;
    let values = xs.iter().map(|&x| {
        let end = x + r as f64 * h;
        if !(0.0..=1.0).contains(&end) {
            return 0.0;
        }
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let sign = if (r - j).is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * c * f.value(x + j as f64 * h)
            })
            .sum::<f64>()
    });
    lp_norm_on_grid(values, p, xs.len())
}

fn sup_over_shifts<F: ScalarFunction + ?Sized>(f: &F, coeffs: &[f64], t: f64, p: f64, xs: &[f64], h_samples: usize) -> f64 {
    (1..=h_samples)
        .flat_map(|k| {
            let h = t * k as f64 / h_samples as f64;
            [h, -h]
        })
        .map(|h| difference_norm(f, coeffs, h, p, xs))
        .fold(0.0, f64::max)
}

/// Grid estimate of `w_{r,p}(f, t) = sup_{|h| ≤ t} ‖Δ_h^r f‖_p` (one-dimensional).
pub fn modulus_of_smoothness<F: ScalarFunction + ?Sized>(f: &F, r: usize, p: f64, t: f64, grid: &ModulusGrid) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidArgument("difference order r must be at least 1".into()));
    }
    check_exponent(p, "p")?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t must be positive and finite, got {t}")));
    }
    grid.validate()?;
    let xs = x_nodes(grid.x_samples, p);
    Ok(sup_over_shifts(f, &binomial_row(r), t, p, &xs, grid.h_samples))
}

/// Modulus on every point of `grid.t_grid`, with each value taken as the sup over all
/// shifts sampled at or below that `t`, so the curve is nondecreasing by construction.
pub fn modulus_curve<F: ScalarFunction + ?Sized>(f: &F, r: usize, p: f64, grid: &ModulusGrid) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(Error::InvalidArgument("difference order r must be at least 1".into()));
    }
    check_exponent(p, "p")?;
    grid.validate()?;
    let xs = x_nodes(grid.x_samples, p);
    let coeffs = binomial_row(r);
    let mut running = 0.0f64;
    Ok(grid
        .t_grid
        .iter()
        .map(|&t| {
            running = running.max(sup_over_shifts(f, &coeffs, t, p, &xs, grid.h_samples));
            running
        })
        .collect())
}

/// `‖f‖_p + (∫ (t^{-s} w_{r,p}(f,t))^q dt/t)^{1/q}` with `r = ⌊s⌋ + 1`, the integral
/// taken by the trapezoid rule in `ln t` over the grid (a sup when `q = ∞`).
pub fn besov_norm_estimate<F: ScalarFunction + ?Sized>(f: &F, s: f64, p: f64, q: f64, grid: &ModulusGrid) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidSmoothness(format!("smoothness s must be positive and finite, got {s}")));
    }
    check_exponent(p, "p").map_err(|e| Error::InvalidSmoothness(e.to_string()))?;
    check_exponent(q, "q").map_err(|e| Error::InvalidSmoothness(e.to_string()))?;
    let r = s.floor() as usize + 1;
    let base = lp_norm(f, p, grid.x_samples)?;
    let w = modulus_curve(f, r, p, grid)?;
    let scaled: Vec<f64> = grid.t_grid.iter().zip(&w).map(|(&t, &wt)| t.powf(-s) * wt).collect();
    let seminorm = if q.is_infinite() {
        scaled.iter().copied().fold(0.0, f64::max)
    } else {
        let integrand: Vec<f64> = scaled.iter().map(|v| v.powf(q)).collect();
        let integral: f64 =
            grid.t_grid.windows(2).zip(integrand.windows(2)).map(|(t, g)| 0.5 * (g[0] + g[1]) * (t[1].ln() - t[0].ln())).sum();
        integral.powf(1.0 / q)
    };
    Ok(base + seminorm)
}
