//! Estimators of the expected log-likelihood gradient `g = E_q[∇ log p]` and
//! Hessian `G = E_q[∇² log p]` under the current belief state.
//!
//! | kind     | `g`                           | `G`                                  |
//! |----------|-------------------------------|--------------------------------------|
//! | MC-HESS  | mean of sampled gradients     | mean of sampled Hessians (dense/diag)|
//! | MC-EF    | mean of sampled gradients     | `−(1/M) Ĝ Ĝᵀ`                         |
//! | LIN-HESS | `Hᵀ R⁻¹ (y − ŷ)` at the mean  | `−Hᵀ R⁻¹ H`                           |
//! | LIN-EF   | same `g`, no Jacobian formed  | `−g gᵀ`                               |

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BongError, Result};
use crate::families::{sample, BeliefState};
use crate::linalg::{row_sq_norms, symmetrize};
use crate::obs::{ObsModel, DEFAULT_OBS_JITTER_SCALE};
use crate::predictor::{
    grad_loglik_theta, hessian_loglik_theta, hessian_vector_product, jacobian_h, rademacher, MlpSpec,
    DEFAULT_HESSIAN_CAP,
};

/// Structured representation of the expected Hessian `G`.
#[derive(Debug, Clone, PartialEq)]
pub enum HessianForm {
    /// Symmetric P×P matrix.
    Dense(DMatrix<f64>),
    /// Only the diagonal is known.
    DiagOnly(DVector<f64>),
    /// `G = −B Bᵀ` with `B` of size P×K.
    NegOuterCols(DMatrix<f64>),
    /// `G = −Hᵀ R⁻¹ H` with `AᵀA = R⁻¹`; `yhat` is the predicted mean.
    LinHess { h: DMatrix<f64>, a: DMatrix<f64>, yhat: DVector<f64> },
}

/// Expected gradient plus structured expected Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub g: DVector<f64>,
    pub hess: HessianForm,
}

impl GradEstimate {
    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Dense P×P matrix `G`.
    pub fn dense_g(&self) -> DMatrix<f64> {
        match &self.hess {
            HessianForm::Dense(m) => m.clone(),
            HessianForm::DiagOnly(d) => DMatrix::from_diagonal(d),
            HessianForm::NegOuterCols(b) => {
                let mut m = -(b * b.transpose());
                symmetrize(&mut m);
                m
            }
            HessianForm::LinHess { h, a, .. } => {
                let ah = a * h;
                let mut m = -(ah.transpose() * ah);
                symmetrize(&mut m);
                m
            }
        }
    }

    /// `diag(G)` without forming `G`.
    pub fn diag_g(&self) -> DVector<f64> {
        match &self.hess {
            HessianForm::Dense(m) => m.diagonal(),
            HessianForm::DiagOnly(d) => d.clone(),
            HessianForm::NegOuterCols(b) => -row_sq_norms(b),
            HessianForm::LinHess { h, a, .. } => {
                let ah = a * h;
                DVector::from_iterator(ah.ncols(), ah.column_iter().map(|c| -c.norm_squared()))
            }
        }
    }

    /// Factor `C` (P×K) with `G = −C Cᵀ`, when the structure provides one.
    pub fn neg_outer_factor(&self) -> Option<DMatrix<f64>> {
        match &self.hess {
            HessianForm::NegOuterCols(b) => Some(b.clone()),
            HessianForm::LinHess { h, a, .. } => Some((a * h).transpose()),
            _ => None,
        }
    }

    /// Product `G v` without densifying structured forms.
    pub fn g_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.hess {
            HessianForm::Dense(m) => m * v,
            HessianForm::DiagOnly(d) => d.component_mul(v),
            _ => {
                let c = self.neg_outer_factor().expect("structured form");
                -(&c * c.tr_mul(v))
            }
        }
    }
}

/// Which estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "mc-hess")]
    McHess,
    #[serde(rename = "mc-ef")]
    McEf,
    #[serde(rename = "lin-hess")]
    LinHess,
    #[serde(rename = "lin-ef")]
    LinEf,
}

impl EstimatorKind {
    /// Parse the CLI names `mc-hess`, `mc-ef`, `lin-hess`, `lin-ef`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mc-hess" => Ok(EstimatorKind::McHess),
            "mc-ef" => Ok(EstimatorKind::McEf),
            "lin-hess" => Ok(EstimatorKind::LinHess),
            "lin-ef" => Ok(EstimatorKind::LinEf),
            other => Err(BongError::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }

    /// Inverse of [`EstimatorKind::parse`].
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::McHess => "mc-hess",
            EstimatorKind::McEf => "mc-ef",
            EstimatorKind::LinHess => "lin-hess",
            EstimatorKind::LinEf => "lin-ef",
        }
    }

    /// True for the sampling-based estimators.
    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, EstimatorKind::McHess | EstimatorKind::McEf)
    }
}

/// Estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCfg {
    pub kind: EstimatorKind,
    /// Monte-Carlo sample count M.
    pub samples: usize,
    /// Hutchinson probe count for diagonal MC-HESS; `None` means `10·M`.
    pub probes: Option<usize>,
    /// Draw MC samples in antithetic pairs `μ ± δ`. With an even M the
    /// sampled gradients of a model that is linear in θ then average to the
    /// gradient at the mean exactly.
    pub antithetic: bool,
    /// Largest P for which dense Hessians are assembled.
    pub hessian_cap: usize,
    /// Relative jitter on the categorical covariance before inversion.
    pub obs_jitter_scale: f64,
}

impl EstimatorCfg {
    /// Defaults for the given kind: M = 10, no antithetic pairing.
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorCfg {
            kind,
            samples: 10,
            probes: None,
            antithetic: false,
            hessian_cap: DEFAULT_HESSIAN_CAP,
            obs_jitter_scale: DEFAULT_OBS_JITTER_SCALE,
        }
    }

    /// Same settings with a different sample count.
    pub fn with_samples(mut self, m: usize) -> Self {
        self.samples = m;
        self
    }

    /// Resolved Hutchinson probe count.
    pub fn resolved_probes(&self) -> usize {
        self.probes.unwrap_or(10 * self.samples)
    }
}

/// Draw `m` parameter samples, optionally in antithetic pairs.
fn draw_params<R: Rng + ?Sized>(
    state: &BeliefState,
    m: usize,
    antithetic: bool,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if m == 0 {
        return Err(BongError::InvalidConfig("Monte-Carlo estimators need M ≥ 1".into()));
    }
    if !antithetic {
        return sample(state, m, rng);
    }
    let base = sample(state, m.div_ceil(2), rng)?;
    let mu = state.mean();
    let mut out = Vec::with_capacity(m);
    for s in base {
        let mirror = mu * 2.0 - &s;
        out.push(s);
        if out.len() < m {
            out.push(mirror);
        }
    }
    Ok(out)
}

/// MC-HESS: sampled gradients and sampled Hessians.
///
/// FC states receive a dense Hessian (P must be within the cap); diagonal
/// states receive a Hutchinson diagonal estimate whose probes are spread
/// round-robin over the M samples. DLR states are not supported because the
/// dense Hessian cannot be folded into a low-rank factor.
#[allow(clippy::too_many_arguments)]
pub fn grad_mc_hess<R: Rng + ?Sized>(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &EstimatorCfg,
    rng: &mut R,
) -> Result<GradEstimate> {
    let p = spec.n_params();
    let m = cfg.samples;
    match state {
        BeliefState::DLR(_) => Err(BongError::EstimatorIncompatible(
            "MC-HESS produces a dense Hessian, which the DLR family cannot absorb".into(),
        )),
        BeliefState::FC(_) => {
            if p > cfg.hessian_cap {
                return Err(BongError::CapExceeded { size: p, cap: cfg.hessian_cap });
            }
            let thetas = draw_params(state, m, cfg.antithetic, rng)?;
            let mut g = DVector::zeros(p);
            let mut hess = DMatrix::zeros(p, p);
            for th in &thetas {
                g += grad_loglik_theta(spec, model, th, x, y)?;
                hess += hessian_loglik_theta(spec, model, th, x, y, cfg.hessian_cap)?;
            }
            let inv_m = 1.0 / m as f64;
            let mut hess = hess * inv_m;
            symmetrize(&mut hess);
            Ok(GradEstimate { g: g * inv_m, hess: HessianForm::Dense(hess) })
        }
        BeliefState::Diag(_) => {
            let thetas = draw_params(state, m, cfg.antithetic, rng)?;
            let grads: Vec<DVector<f64>> =
                thetas.iter().map(|th| grad_loglik_theta(spec, model, th, x, y)).collect::<Result<_>>()?;
            let n = cfg.resolved_probes().max(1);
            let mut diag = DVector::zeros(p);
            for j in 0..n {
                let k = j % m;
                let z = rademacher(p, rng);
                let hz = hessian_vector_product(spec, model, &thetas[k], x, y, &grads[k], &z)?;
                diag += z.component_mul(&hz);
            }
            let g = grads.iter().fold(DVector::zeros(p), |acc, gi| acc + gi) / m as f64;
            Ok(GradEstimate { g, hess: HessianForm::DiagOnly(diag / n as f64) })
        }
    }
}

/// MC-EF: sampled gradients with the empirical-Fisher Hessian
/// `G = −(1/M) Σ ĝ⁽ᵐ⁾ĝ⁽ᵐ⁾ᵀ`, stored as `B = Ĝ / √M`. Uses the observed `y`.
pub fn grad_mc_ef<R: Rng + ?Sized>(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &EstimatorCfg,
    rng: &mut R,
) -> Result<GradEstimate> {
    let p = spec.n_params();
    let m = cfg.samples;
    let thetas = draw_params(state, m, cfg.antithetic, rng)?;
    let mut b = DMatrix::zeros(p, m);
    let mut g = DVector::zeros(p);
    for (k, th) in thetas.iter().enumerate() {
        let gk = grad_loglik_theta(spec, model, th, x, y)?;
        g += &gk;
        b.set_column(k, &gk);
    }
    let inv_m = 1.0 / m as f64;
    Ok(GradEstimate { g: g * inv_m, hess: HessianForm::NegOuterCols(b * inv_m.sqrt()) })
}

/// LIN-HESS: linearize the mean map at μ and moment-match a Gaussian
/// likelihood: `g = Hᵀ R⁻¹ (y − ŷ)`, `G = −Hᵀ R⁻¹ H`.
pub fn grad_lin_hess(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    obs_jitter_scale: f64,
) -> Result<GradEstimate> {
    let mu = state.mean();
    let f = spec.forward(mu, x)?;
    let yhat = model.mean_map(&f);
    let h = jacobian_h(spec, model, mu, x)?;
    let (rinv, a) = model.regularized_rinv(&f, model.default_jitter(&f, obs_jitter_scale))?;
    let g = h.tr_mul(&(rinv * (y - &yhat)));
    Ok(GradEstimate { g, hess: HessianForm::LinHess { h, a, yhat } })
}

/// LIN-EF: gradient of `−½ (y − h(θ))ᵀ R⁻¹ (y − h(θ))` at μ by a single
/// backward pass (R⁻¹ held at its value at μ), with `G = −g gᵀ`.
pub fn grad_lin_ef(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    obs_jitter_scale: f64,
) -> Result<GradEstimate> {
    let mu = state.mean();
    let cache = spec.forward_cache(mu, x)?;
    let f = cache.output();
    let yhat = model.mean_map(&f);
    let (rinv, _) = model.regularized_rinv(&f, model.default_jitter(&f, obs_jitter_scale))?;
    let seed = model.mean_map_vjp(&f, &(rinv * (y - yhat)));
    let g = spec.vjp(mu, &cache, &seed);
    let b = DMatrix::from_column_slice(g.len(), 1, g.as_slice());
    Ok(GradEstimate { g, hess: HessianForm::NegOuterCols(b) })
}

/// Dispatch on the configured estimator kind.
pub fn estimate<R: Rng + ?Sized>(
    cfg: &EstimatorCfg,
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<GradEstimate> {
    if state.dim() != spec.n_params() {
        return Err(BongError::ShapeError(format!(
            "state dimension {} does not match network parameter count {}",
            state.dim(),
            spec.n_params()
        )));
    }
    match cfg.kind {
        EstimatorKind::McHess => grad_mc_hess(state, spec, model, x, y, cfg, rng),
        EstimatorKind::McEf => grad_mc_ef(state, spec, model, x, y, cfg, rng),
        EstimatorKind::LinHess => grad_lin_hess(state, spec, model, x, y, cfg.obs_jitter_scale),
        EstimatorKind::LinEf => grad_lin_ef(state, spec, model, x, y, cfg.obs_jitter_scale),
    }
}
