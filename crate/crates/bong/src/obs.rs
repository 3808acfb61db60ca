//! Exponential-family observation models `p(y | f)`, where `f` is the
//! network output.
//!
//! Two models are provided: a Gaussian with fixed covariance `R` (where `f`
//! is the predictive mean) and a categorical likelihood over `C` classes
//! (where `f` are the logits and `y` is one-hot).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, BongError, Result};
use crate::linalg::{cholesky, spd_inverse};

/// Default relative jitter added to the categorical covariance before it is
/// inverted: `ε = scale · trace(V) / C`.
pub const DEFAULT_OBS_JITTER_SCALE: f64 = 1e-8;

/// Lower bound on `trace(V) / C` used by [`ObsModel::default_jitter`].
pub const MIN_JITTER_TRACE: f64 = 1e-150;

/// Likelihood family of the observations.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsModel {
    /// `y ~ N(f, R)` with fixed SPD `R`.
    Gaussian { r: DMatrix<f64>, r_inv: DMatrix<f64>, log_det_2pi_r: f64 },
    /// `y ~ Cat(softmax(f))` with one-hot `y`.
    Categorical { classes: usize },
}

/// Numerically stable `log Σ exp(f)`.
pub fn logsumexp(f: &DVector<f64>) -> f64 {
    let m = f.max();
    if !m.is_finite() {
        return m;
    }
    m + f.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(f: &DVector<f64>) -> DVector<f64> {
    let m = f.max();
    let e = f.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

impl ObsModel {
    /// Gaussian likelihood with covariance `r` (must be SPD).
    pub fn gaussian(r: DMatrix<f64>) -> Result<Self> {
        if !r.is_square() || r.nrows() == 0 {
            return Err(BongError::ShapeError("observation covariance must be square and non-empty".into()));
        }
        let ch = cholesky(&r).ok_or_else(|| BongError::NotPositiveDefinite("observation covariance".into()))?;
        let r_inv = spd_inverse(&r).ok_or(BongError::SingularObservationCov)?;
        let c = r.nrows() as f64;
        let log_det_2pi_r = c * (2.0 * std::f64::consts::PI).ln() + ch.ln_determinant();
        Ok(ObsModel::Gaussian { r, r_inv, log_det_2pi_r })
    }

    /// Scalar Gaussian likelihood with variance `var`.
    pub fn gaussian_scalar(var: f64) -> Result<Self> {
        Self::gaussian(DMatrix::from_element(1, 1, var))
    }

    /// Categorical likelihood over `classes ≥ 2` outcomes.
    pub fn categorical(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(BongError::InvalidConfig("categorical model needs at least 2 classes".into()));
        }
        Ok(ObsModel::Categorical { classes })
    }

    /// Output dimension C.
    pub fn dim(&self) -> usize {
        match self {
            ObsModel::Gaussian { r, .. } => r.nrows(),
            ObsModel::Categorical { classes } => *classes,
        }
    }

    /// True for the categorical model.
    pub fn is_classification(&self) -> bool {
        matches!(self, ObsModel::Categorical { .. })
    }

    /// Check that `y` is a valid observation for this model.
    pub fn validate_observation(&self, y: &DVector<f64>) -> Result<()> {
        check_len("observation", y.len(), self.dim())?;
        if let ObsModel::Categorical { .. } = self {
            let ok = y.iter().all(|v| *v == 0.0 || *v == 1.0) && y.sum() == 1.0;
            if !ok {
                return Err(BongError::ShapeError("categorical observation must be one-hot".into()));
            }
        }
        Ok(())
    }

    /// Mean map `h = E[y | f]`: identity (Gaussian) or softmax (categorical).
    pub fn mean_map(&self, f: &DVector<f64>) -> DVector<f64> {
        match self {
            ObsModel::Gaussian { .. } => f.clone(),
            ObsModel::Categorical { .. } => softmax(f),
        }
    }

    /// Conditional covariance `V = Cov[y | f]`: `R` or `Diag(p) − p pᵀ`.
    ///
    /// The categorical diagonal is formed as `p_i Σ_{j≠i} p_j`, which equals
    /// `p_i − p_i²` but keeps full relative accuracy when `p_i` is close to 1.
    pub fn cond_cov(&self, f: &DVector<f64>) -> DMatrix<f64> {
        match self {
            ObsModel::Gaussian { r, .. } => r.clone(),
            ObsModel::Categorical { .. } => {
                let p = softmax(f);
                let mut v = -(&p * p.transpose());
                for i in 0..p.len() {
                    let rest: f64 = p.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| q).sum();
                    v[(i, i)] = p[i] * rest;
                }
                v
            }
        }
    }

    /// Vector-Jacobian product of the mean map: `(∂h/∂f)ᵀ u`.
    pub fn mean_map_vjp(&self, f: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            ObsModel::Gaussian { .. } => u.clone(),
            ObsModel::Categorical { .. } => {
                let p = softmax(f);
                let pu = p.dot(u);
                p.component_mul(&u.map(|v| v - pu))
            }
        }
    }

    /// Log-partition function in the model's natural coordinates `η`:
    /// `½ ηᵀ R η` for the Gaussian (with `η = R⁻¹ f`) and `logsumexp(η)` for
    /// the categorical model (with `η = f`). Its gradient is the mean and
    /// its Hessian the conditional covariance.
    pub fn log_partition_natural(&self, eta: &DVector<f64>) -> f64 {
        match self {
            ObsModel::Gaussian { r, .. } => 0.5 * eta.dot(&(r * eta)),
            ObsModel::Categorical { .. } => logsumexp(eta),
        }
    }

    /// Natural parameter `η` corresponding to network output `f`.
    pub fn natural_from_output(&self, f: &DVector<f64>) -> DVector<f64> {
        match self {
            ObsModel::Gaussian { r_inv, .. } => r_inv * f,
            ObsModel::Categorical { .. } => f.clone(),
        }
    }

    /// `log p(y | f)`.
    pub fn loglik(&self, y: &DVector<f64>, f: &DVector<f64>) -> f64 {
        match self {
            ObsModel::Gaussian { r_inv, log_det_2pi_r, .. } => {
                let e = y - f;
                -0.5 * (e.dot(&(r_inv * &e)) + log_det_2pi_r)
            }
            ObsModel::Categorical { .. } => y.dot(f) - logsumexp(f),
        }
    }

    /// `∇_f log p(y | f)`: `R⁻¹(y − f)` or `y − softmax(f)`.
    pub fn loglik_grad_f(&self, y: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        match self {
            ObsModel::Gaussian { r_inv, .. } => r_inv * (y - f),
            ObsModel::Categorical { .. } => y - softmax(f),
        }
    }

    /// Jitter added to `V` before inversion: zero for the Gaussian model and
    /// `scale · trace(V) / C` for the categorical model. The trace term is
    /// floored at [`MIN_JITTER_TRACE`] so that a fully saturated softmax
    /// (`V = 0` in floating point) still yields a finite inverse.
    pub fn default_jitter(&self, f: &DVector<f64>, scale: f64) -> f64 {
        match self {
            ObsModel::Gaussian { .. } => 0.0,
            ObsModel::Categorical { classes } => {
                scale * (self.cond_cov(f).trace() / *classes as f64).max(MIN_JITTER_TRACE)
            }
        }
    }

    /// Invert `V(f) + jitter·I` and return `(R⁻¹, A)` with `AᵀA = R⁻¹`.
    pub fn regularized_rinv(&self, f: &DVector<f64>, jitter: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !(jitter >= 0.0) {
            return Err(BongError::InvalidConfig(format!("jitter must be non-negative, got {jitter}")));
        }
        let rinv = match self {
            ObsModel::Gaussian { r_inv, .. } if jitter == 0.0 => r_inv.clone(),
            _ => {
                let mut v = self.cond_cov(f);
                for i in 0..v.nrows() {
                    v[(i, i)] += jitter;
                }
                spd_inverse(&v).ok_or(BongError::SingularObservationCov)?
            }
        };
        let ch = cholesky(&rinv).ok_or(BongError::SingularObservationCov)?;
        let a = ch.l().transpose();
        Ok((rinv, a))
    }
}
