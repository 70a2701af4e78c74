//! Fully connected ReLU networks stored as one flat parameter vector.
//!
//! Flattening order (part of the checkpoint format, tag [`FLATTEN_ORDER`]):
//! layers in order `1..=L+1`; within a layer the weight matrix `W^(l)` of shape
//! `p_{l−1} × p_l` in row-major order (input index major, output index minor),
//! followed by the bias `b^(l)` of length `p_l`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::besov::Dataset;
use crate::error::{Error, Result};
use crate::special::LN_SQRT_2PI;

pub const FLATTEN_ORDER: &str = "layer-major/weights-then-bias/row-major-in-out/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub d_in: usize,
    pub hidden: Vec<usize>,
}

/// Offsets of one affine layer inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
}

impl NetworkShape {
    pub fn new(d_in: usize, hidden: Vec<usize>) -> Result<Self> {
        if d_in == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need d_in ≥ 1 and at least one hidden layer of positive width, got d_in = {d_in}, hidden = {hidden:?}"
            )));
        }
        Ok(Self { d_in, hidden })
    }

    /// `depth` hidden layers of `width` units.
    pub fn uniform(d_in: usize, depth: usize, width: usize) -> Result<Self> {
        Self::new(d_in, vec![width; depth])
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// `(d, p_1, …, p_L, 1)`
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.d_in).chain(self.hidden.iter().copied()).chain([1]).collect()
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let dims = self.layer_dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let slot = LayerSlot { fan_in: w[0], fan_out: w[1], weights: offset, bias: offset + w[0] * w[1] };
                offset = slot.bias + w[1];
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn max_width(&self) -> usize {
        self.layer_dims().into_iter().max().unwrap_or(1)
    }
}

/// Weights and biases of a ReLU network, `f_θ(x) = A_{L+1} ∘ ReLU ∘ A_L ∘ ⋯ ∘ ReLU ∘ A_1 x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    shape: NetworkShape,
    theta: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Self {
        let theta = vec![0.0; shape.param_count()];
        Self { shape, theta }
    }

    pub fn from_flat(shape: NetworkShape, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != shape.param_count() {
            return Err(Error::ShapeMismatch(format!("shape needs {} parameters, got {}", shape.param_count(), theta.len())));
        }
        Ok(Self { shape, theta })
    }

    /// Builds parameters from per-layer `(W, b)` with `W` given as rows over inputs.
    pub fn from_layers(shape: NetworkShape, layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Result<Self> {
        let slots = shape.layers();
        if layers.len() != slots.len() {
            return Err(Error::ShapeMismatch(format!("{} layers given, shape has {}", layers.len(), slots.len())));
        }
        let mut theta = Vec::with_capacity(shape.param_count());
        for ((w, b), slot) in layers.iter().zip(&slots) {
            if w.len() != slot.fan_in || w.iter().any(|row| row.len() != slot.fan_out) || b.len() != slot.fan_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer expects {}×{} weights and {} biases",
                    slot.fan_in, slot.fan_out, slot.fan_out
                )));
            }
            w.iter().for_each(|row| theta.extend_from_slice(row));
            theta.extend_from_slice(b);
        }
        Self::from_flat(shape, theta)
    }

    /// Gaussian draw with standard deviation `fan_in^{-1/2}` for every weight and bias.
    pub fn random_init(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; shape.param_count()];
        for slot in shape.layers() {
            let scale = (slot.fan_in as f64).powf(-0.5);
            let end = slot.bias + slot.fan_out;
            for v in &mut theta[slot.weights..end] {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self { shape, theta }
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `‖θ‖₀`
    pub fn sparsity(&self) -> usize {
        self.theta.iter().filter(|v| **v != 0.0).count()
    }

    /// `‖θ‖_∞`
    pub fn sup_norm(&self) -> f64 {
        self.theta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.shape.d_in {
            return Err(Error::ShapeMismatch(format!("input has dimension {}, network expects {}", x.len(), self.shape.d_in)));
        }
        Ok(Evaluator::new(&self.shape).forward(&self.theta, x))
    }

    pub fn predict(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if !xs.len().is_multiple_of(self.shape.d_in) {
            return Err(Error::ShapeMismatch("input buffer is not a whole number of points".into()));
        }
        let mut ev = Evaluator::new(&self.shape);
        Ok(xs.chunks_exact(self.shape.d_in).map(|x| ev.forward(&self.theta, x)).collect())
    }
}

/// `θ ∈ Θ(L, W, S, B)`: `L` hidden layers all of width `W`, at most `S` nonzeros, entries bounded by `B`.
pub fn membership(params: &NetworkParams, depth: usize, width: usize, sparsity: usize, bound: f64) -> bool {
    let shape = params.shape();
    shape.depth() == depth && shape.hidden.iter().all(|&w| w == width) && params.sparsity() <= sparsity && params.sup_norm() <= bound
}

/// Hard thresholding `θ_i 1(|θ_i| > a)`.
pub fn truncate(params: &NetworkParams, a: f64) -> NetworkParams {
    let theta = params.theta.iter().map(|&v| if v.abs() > a { v } else { 0.0 }).collect();
    NetworkParams { shape: params.shape.clone(), theta }
}

/// Reusable buffers for forward and reverse passes over one shape.
#[derive(Clone, Debug)]
pub struct Evaluator {
    slots: Vec<LayerSlot>,
    /// post-activation of each layer input; `acts[0]` is x
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Evaluator {
    pub fn new(shape: &NetworkShape) -> Self {
        let dims = shape.layer_dims();
        let max = shape.max_width();
        Self {
            slots: shape.layers(),
            acts: dims[..dims.len() - 1].iter().map(|&p| vec![0.0; p]).collect(),
            delta: vec![0.0; max],
            delta_prev: vec![0.0; max],
        }
    }

    pub fn forward(&mut self, theta: &[f64], x: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(x);
        let last = self.slots.len() - 1;
        for (l, slot) in self.slots.iter().enumerate() {
            let w = &theta[slot.weights..slot.bias];
            let b = &theta[slot.bias..slot.bias + slot.fan_out];
            if l == last {
                let input = &self.acts[l];
                return b[0] + input.iter().zip(w).map(|(a, wi)| a * wi).sum::<f64>();
            }
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.copy_from_slice(b);
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &w[i * slot.fan_out..(i + 1) * slot.fan_out];
                for (o, &wij) in out.iter_mut().zip(row) {
                    *o += a * wij;
                }
            }
            for o in out.iter_mut() {
                // ReLU, with derivative 0 at exactly 0
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
        unreachable!("network has an output layer")
    }

    /// Adds `weight · ∂f/∂θ` at `x` into `grad`; must follow `forward` on the same `x`.
    fn backward(&mut self, theta: &[f64], weight: f64, grad: &mut [f64]) {
        let last = self.slots.len() - 1;
        self.delta[0] = weight;
        let mut fan_out = 1;
        for l in (0..=last).rev() {
            let slot = self.slots[l];
            let input = &self.acts[l];
            let delta = &self.delta[..fan_out];
            {
                let (gw, gb) = grad[slot.weights..slot.bias + slot.fan_out].split_at_mut(slot.bias - slot.weights);
                for (g, d) in gb.iter_mut().zip(delta) {
                    *g += d;
                }
                for (i, &a) in input.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                    for (g, d) in row.iter_mut().zip(delta) {
                        *g += a * d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &theta[slot.weights..slot.bias];
            for (i, &a) in input.iter().enumerate() {
                self.delta_prev[i] = if a > 0.0 {
                    let row = &w[i * fan_out..(i + 1) * fan_out];
                    row.iter().zip(delta).map(|(wij, d)| wij * d).sum()
                } else {
                    0.0
                };
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
            fan_out = slot.fan_in;
        }
    }

    /// Gaussian log-likelihood over the selected points (all when `subset` is `None`),
    /// scaled by `scale`; the matching gradient is added into `grad`.
    pub fn loglik_grad(
        &mut self,
        theta: &[f64],
        data: &Dataset,
        subset: Option<&[usize]>,
        sigma: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let inv_var = 1.0 / (sigma * sigma);
        let norm_const = -sigma.ln() - LN_SQRT_2PI;
        let mut total = 0.0;
        let mut visit = |i: usize, ev: &mut Self| {
            let f = ev.forward(theta, data.point(i));
            let resid = data.y[i] - f;
            total += norm_const - 0.5 * resid * resid * inv_var;
            ev.backward(theta, scale * resid * inv_var, grad);
        };
        match subset {
            Some(idx) => idx.iter().for_each(|&i| visit(i, self)),
            None => (0..data.len()).for_each(|i| visit(i, self)),
        }
        scale * total
    }

    /// Gaussian log-likelihood without the gradient.
    pub fn loglik(&mut self, theta: &[f64], data: &Dataset, sigma: f64) -> f64 {
        let inv_var = 1.0 / (sigma * sigma);
        let norm_const = -sigma.ln() - LN_SQRT_2PI;
        (0..data.len())
            .map(|i| {
                let resid = data.y[i] - self.forward(theta, data.point(i));
                norm_const - 0.5 * resid * resid * inv_var
            })
            .sum()
    }
}

fn check_data(shape: &NetworkShape, data: &Dataset, sigma: f64) -> Result<()> {
    if data.d != shape.d_in {
        return Err(Error::ShapeMismatch(format!("data dimension {} vs network input {}", data.d, shape.d_in)));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("noise sd must be positive, got {sigma}")));
    }
    Ok(())
}

/// `Σ_i ln N(y_i | f_θ(x_i), σ²)` and its gradient by reverse accumulation.
pub fn loglik_and_grad(params: &NetworkParams, data: &Dataset, sigma: f64) -> Result<(f64, Vec<f64>)> {
    check_data(params.shape(), data, sigma)?;
    let mut grad = vec![0.0; params.len()];
    let value = Evaluator::new(params.shape()).loglik_grad(params.flat(), data, None, sigma, 1.0, &mut grad);
    Ok((value, grad))
}

pub fn loglik(params: &NetworkParams, data: &Dataset, sigma: f64) -> Result<f64> {
    check_data(params.shape(), data, sigma)?;
    Ok(Evaluator::new(params.shape()).loglik(params.flat(), data, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_hidden(w1: f64, b1: f64, w2: f64, b2: f64) -> NetworkParams {
        let shape = NetworkShape::new(1, vec![1]).unwrap();
        NetworkParams::from_layers(shape, &[(vec![vec![w1]], vec![b1]), (vec![vec![w2]], vec![b2])]).unwrap()
    }

    #[test]
    fn forward_hand_cases() {
        assert_relative_eq!(one_hidden(1.0, 0.0, 1.0, 0.0).forward(&[0.7]).unwrap(), 0.7);
        assert_eq!(one_hidden(1.0, -1.0, 1.0, 0.0).forward(&[0.7]).unwrap(), 0.0);
        assert_relative_eq!(one_hidden(2.0, -0.5, 3.0, 1.0).forward(&[0.5]).unwrap(), 2.5);
        assert!(matches!(one_hidden(1.0, 0.0, 1.0, 0.0).forward(&[0.1, 0.2]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn flatten_layout() {
        let shape = NetworkShape::new(2, vec![3]).unwrap();
        let w1 = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let p =
            NetworkParams::from_layers(shape.clone(), &[(w1, vec![7.0, 8.0, 9.0]), (vec![vec![10.0], vec![11.0], vec![12.0]], vec![13.0])])
                .unwrap();
        assert_eq!(p.flat(), &(1..=13).map(f64::from).collect::<Vec<_>>()[..]);
        assert_eq!(shape.param_count(), 13);
        let slots = shape.layers();
        assert_eq!((slots[1].weights, slots[1].bias), (9, 12));
    }

    #[test]
    fn membership_cases() {
        let shape = NetworkShape::uniform(1, 2, 3).unwrap();
        let zero = NetworkParams::zeros(shape.clone());
        assert!(membership(&zero, 2, 3, 0, 0.0));
        assert!(!membership(&zero, 3, 3, 0, 0.0));
        let mut p = zero.clone();
        p.flat_mut()[4] = 2.0;
        assert!(membership(&p, 2, 3, 1, 2.0));
        assert!(!membership(&p, 2, 3, 1, 1.0));
        p.flat_mut()[7] = -0.5;
        // S + 1 nonzeros with S = 1
        assert!(!membership(&p, 2, 3, 1, 2.0));
    }

    #[test]
    fn truncation() {
        let shape = NetworkShape::new(1, vec![1]).unwrap();
        let p = NetworkParams::from_flat(shape, vec![0.1, -0.005, 0.01, 0.3]).unwrap();
        assert_eq!(truncate(&p, 0.01).flat(), &[0.1, 0.0, 0.0, 0.3]);
        assert_eq!(truncate(&p, 0.0), p);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let p = one_hidden(1.0, 0.0, 1.0, 0.0);
        let xs: Vec<f64> = (0..10).map(|i| 0.05 + i as f64 / 10.0).collect();
        let data = Dataset::new(1, xs.clone(), xs, 0.0, 0).unwrap();
        let sigma = 0.3;
        let (ll, grad) = loglik_and_grad(&p, &data, sigma).unwrap();
        assert_relative_eq!(ll, 10.0 * (1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt())).ln(), max_relative = 1e-14);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn doubling_residuals_quadruples_quadratic_term() {
        // zero network: residual = y
        let p = NetworkParams::zeros(NetworkShape::uniform(1, 2, 3).unwrap());
        let data = Dataset::new(1, vec![0.1, 0.5, 0.9], vec![0.3, -0.2, 0.7], 0.1, 0).unwrap();
        let doubled = Dataset::new(1, data.x.clone(), data.y.iter().map(|y| 2.0 * y).collect(), 0.1, 0).unwrap();
        let sigma: f64 = 0.5;
        let constant = 3.0 * (-sigma.ln() - LN_SQRT_2PI);
        let q1 = loglik(&p, &data, sigma).unwrap() - constant;
        let q2 = loglik(&p, &doubled, sigma).unwrap() - constant;
        assert_relative_eq!(q2, 4.0 * q1, max_relative = 1e-13);
    }

    #[test]
    fn rejects_bad_sigma_and_dimension() {
        let p = NetworkParams::zeros(NetworkShape::uniform(1, 1, 2).unwrap());
        let data = Dataset::new(1, vec![0.5], vec![0.0], 0.1, 0).unwrap();
        assert!(loglik_and_grad(&p, &data, 0.0).is_err());
        let d2 = Dataset::new(2, vec![0.5, 0.5], vec![0.0], 0.1, 0).unwrap();
        assert!(matches!(loglik_and_grad(&p, &d2, 0.1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn output_row_homogeneity() {
        let shape = NetworkShape::uniform(1, 2, 4).unwrap();
        let p = NetworkParams::random_init(shape.clone(), 3);
        let last = *shape.layers().last().unwrap();
        let mut q = p.clone();
        q.flat_mut()[last.bias] = 0.0;
        let mut scaled = q.clone();
        for v in &mut scaled.flat_mut()[last.weights..last.bias] {
            *v *= 2.5;
        }
        for &x in &[0.0, 0.3, 0.8] {
            assert_relative_eq!(scaled.forward(&[x]).unwrap(), 2.5 * q.forward(&[x]).unwrap(), max_relative = 1e-13, epsilon = 1e-15);
        }
    }
}
