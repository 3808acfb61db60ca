//! Fully-connected MLP over a flat parameter vector, with hand-written
//! reverse-mode differentiation.
//!
//! Parameter layout: for each layer in order, the weight matrix `n_out × n_in`
//! in row-major order followed by the `n_out` biases. Hidden layers apply the
//! activation; the output layer is linear, so `f(x, θ)` is the natural
//! parameter of the observation model (logits or regression mean).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, BongError, Result};
use crate::linalg::symmetrize;
use crate::obs::ObsModel;

/// Default largest P for which a dense Hessian may be assembled.
pub const DEFAULT_HESSIAN_CAP: usize = 2000;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a fully-connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    n_params: usize,
}

/// Activations recorded by a forward pass, reused by backward passes.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Network output `f(x, θ)`.
    pub fn output(&self) -> DVector<f64> {
        DVector::from_column_slice(self.acts.last().expect("non-empty cache"))
    }
}

impl MlpSpec {
    /// Build a spec from `[D, hidden..., C]`. The input width may be zero, in
    /// which case the first layer reduces to its bias.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(BongError::InvalidConfig("an MLP needs at least input and output layers".into()));
        }
        if layer_sizes[1..].contains(&0) {
            return Err(BongError::InvalidConfig("hidden and output layers must be non-empty".into()));
        }
        let n_params = layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
        Ok(MlpSpec { layer_sizes, activation, n_params })
    }

    /// Single affine layer `f = W x + b`.
    pub fn linear(d_in: usize, d_out: usize) -> Result<Self> {
        Self::new(vec![d_in, d_out], Activation::Tanh)
    }

    /// Total parameter count `Σ (n_in + 1) n_out`.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Input width D.
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Output width C.
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    /// Layer widths.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Hidden activation.
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Seeded initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(self.n_params);
        for w in self.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let std = if n_in > 0 { 1.0 / (n_in as f64).sqrt() } else { 0.0 };
            for _ in 0..n_in * n_out {
                theta.push(std * rng.sample::<f64, _>(StandardNormal));
            }
            theta.extend(std::iter::repeat_n(0.0, n_out));
        }
        DVector::from_vec(theta)
    }

    fn check_shapes(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<()> {
        check_len("parameter vector", theta.len(), self.n_params)?;
        check_len("input", x.len(), self.input_dim())
    }

    /// Forward pass keeping the activations needed for backward passes.
    pub fn forward_cache(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<ForwardCache> {
        self.check_shapes(theta, x)?;
        let th = theta.as_slice();
        let n_layers = self.layer_sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.as_slice().to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a_in = &acts[l];
            let wts = &th[off..off + n_in * n_out];
            let bias = &th[off + n_in * n_out..off + (n_in + 1) * n_out];
            let last = l + 1 == n_layers;
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &wts[o * n_in..(o + 1) * n_in];
                    let z = bias[o] + row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>();
                    if last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
            off += (n_in + 1) * n_out;
        }
        Ok(ForwardCache { acts })
    }

    /// `f(x, θ)`.
    pub fn forward(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_cache(theta, x)?.output())
    }

    /// Reverse-mode product `J_f(θ)ᵀ v` reusing a forward cache.
    pub fn vjp(&self, theta: &DVector<f64>, cache: &ForwardCache, v: &DVector<f64>) -> DVector<f64> {
        let th = theta.as_slice();
        let n_layers = self.layer_sizes.len() - 1;
        let mut grad = vec![0.0; self.n_params];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
        }
        let mut delta: Vec<f64> = v.as_slice().to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a_in = &cache.acts[l];
            let off = offsets[l];
            for o in 0..n_out {
                let d = delta[o];
                let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (gi, ai) in g.iter_mut().zip(a_in) {
                    *gi = d * ai;
                }
                grad[off + n_in * n_out + o] = d;
            }
            if l > 0 {
                let wts = &th[off..off + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (ni, w) in next.iter_mut().zip(&wts[o * n_in..(o + 1) * n_in]) {
                            *ni += w * d;
                        }
                    }
                }
                for (ni, a) in next.iter_mut().zip(a_in) {
                    *ni *= self.activation.deriv_from_output(*a);
                }
                delta = next;
            }
        }
        DVector::from_vec(grad)
    }

    /// Jacobian of `f` in θ (C×P), one backward pass per output.
    pub fn jacobian_f(&self, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let cache = self.forward_cache(theta, x)?;
        let c = self.output_dim();
        let mut jac = DMatrix::zeros(c, self.n_params);
        for k in 0..c {
            let e = DVector::from_fn(c, |i, _| if i == k { 1.0 } else { 0.0 });
            jac.set_row(k, &self.vjp(theta, &cache, &e).transpose());
        }
        Ok(jac)
    }
}

fn check_model(spec: &MlpSpec, model: &ObsModel) -> Result<()> {
    check_len("model output dimension", model.dim(), spec.output_dim())
}

/// `∇_θ log p(y | f(x, θ))` by one backward pass.
pub fn grad_loglik_theta(
    spec: &MlpSpec,
    model: &ObsModel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_model(spec, model)?;
    check_len("observation", y.len(), model.dim())?;
    let cache = spec.forward_cache(theta, x)?;
    let gf = model.loglik_grad_f(y, &cache.output());
    Ok(spec.vjp(theta, &cache, &gf))
}

/// Jacobian of the mean map `h(f(x, θ))` in θ (C×P).
///
/// Row `c` is the reverse-mode gradient of `h_c`, seeded with the `c`-th row
/// of `∂h/∂f`.
pub fn jacobian_h(spec: &MlpSpec, model: &ObsModel, theta: &DVector<f64>, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_model(spec, model)?;
    let cache = spec.forward_cache(theta, x)?;
    let f = cache.output();
    let c = model.dim();
    let mut jac = DMatrix::zeros(c, spec.n_params());
    for k in 0..c {
        let e = DVector::from_fn(c, |i, _| if i == k { 1.0 } else { 0.0 });
        let seed = model.mean_map_vjp(&f, &e);
        jac.set_row(k, &spec.vjp(theta, &cache, &seed).transpose());
    }
    Ok(jac)
}

/// Finite-difference step for coordinate value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-5 * (1.0 + v.abs())
}

/// Dense Hessian of the log-likelihood in θ, assembled column by column from
/// central differences of the analytic gradient, then symmetrized.
pub fn hessian_loglik_theta(
    spec: &MlpSpec,
    model: &ObsModel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cap: usize,
) -> Result<DMatrix<f64>> {
    let p = spec.n_params();
    if p > cap {
        return Err(BongError::CapExceeded { size: p, cap });
    }
    check_len("parameter vector", theta.len(), p)?;
    let mut hess = DMatrix::zeros(p, p);
    let mut th = theta.clone();
    for i in 0..p {
        let h = fd_step(theta[i]);
        th[i] = theta[i] + h;
        let gp = grad_loglik_theta(spec, model, &th, x, y)?;
        th[i] = theta[i] - h;
        let gm = grad_loglik_theta(spec, model, &th, x, y)?;
        th[i] = theta[i];
        hess.set_column(i, &((gp - gm) / (2.0 * h)));
    }
    symmetrize(&mut hess);
    Ok(hess)
}

/// Hessian-vector product by a forward difference of the analytic gradient.
pub fn hessian_vector_product(
    spec: &MlpSpec,
    model: &ObsModel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grad_at_theta: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let scale = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eps = 1e-6 * (1.0 + scale);
    let gz = grad_loglik_theta(spec, model, &(theta + z * eps), x, y)?;
    Ok((gz - grad_at_theta) / eps)
}

/// Hutchinson estimate `(1/N) Σ zⱼ ⊙ (H zⱼ)` of the Hessian diagonal with
/// Rademacher probes.
pub fn hutchinson_diag_hessian<R: Rng + ?Sized>(
    spec: &MlpSpec,
    model: &ObsModel,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    n_probes: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if n_probes == 0 {
        return Err(BongError::InvalidConfig("Hutchinson needs at least one probe".into()));
    }
    let p = spec.n_params();
    let g0 = grad_loglik_theta(spec, model, theta, x, y)?;
    let mut acc = DVector::zeros(p);
    for _ in 0..n_probes {
        let z = rademacher(p, rng);
        let hz = hessian_vector_product(spec, model, theta, x, y, &g0, &z)?;
        acc += z.component_mul(&hz);
    }
    Ok(acc / n_probes as f64)
}

/// Vector of independent ±1 entries.
pub fn rademacher<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(p, (0..p).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }))
}
