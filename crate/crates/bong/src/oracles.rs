//! Reference implementations used to check the main code paths.
//!
//! Everything here is deliberately naive: dense matrices, explicit inverses
//! and O(P³) work. Nothing in this module calls into the updaters, so
//! agreement between the two is meaningful.

use nalgebra::{DMatrix, DVector};

use crate::error::{BongError, Result};

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| BongError::SingularCovariance(format!("{what} is singular")))
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Exact conjugate Bayes
// ---------------------------------------------------------------------------

/// Conjugate prior `p(η) ∝ exp(χᵀη − ν A(η))` for an exponential-family
/// likelihood with natural parameter `η` and log-partition `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateModel {
    pub chi: DVector<f64>,
    pub nu: f64,
}

impl ConjugateModel {
    /// Construct with `ν > 0`.
    pub fn new(chi: DVector<f64>, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(BongError::InvalidConfig(format!("pseudo-count must be positive, got {nu}")));
        }
        Ok(ConjugateModel { chi, nu })
    }

    /// Conjugate prior equivalent to `θ ~ N(mean, R/ν)` for a Gaussian
    /// likelihood `y ~ N(θ, R)`.
    pub fn from_gaussian_mean(mean: &DVector<f64>, nu: f64) -> Result<Self> {
        Self::new(mean * nu, nu)
    }

    /// Bayes' rule in natural coordinates: `χ ← χ + y`, `ν ← ν + 1`.
    pub fn exact_conjugate_update(&self, y: &DVector<f64>) -> Self {
        ConjugateModel { chi: &self.chi + y, nu: self.nu + 1.0 }
    }

    /// Posterior over the mean `θ` of a Gaussian likelihood `y ~ N(θ, R)`:
    /// `N(χ/ν, R/ν)`.
    pub fn gaussian_moments(&self, r: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.chi / self.nu, r / self.nu)
    }
}

/// Exact Bayes for a linear-Gaussian observation `y = H θ + b + ε`,
/// `ε ~ N(0, R)`, computed by adding natural parameters:
/// `Λ' = Σ⁻¹ + HᵀR⁻¹H`, `η' = Σ⁻¹μ + HᵀR⁻¹(y − b)`.
pub fn exact_linear_gaussian_update(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prec = inverse(sigma, "prior covariance")?;
    let rinv = inverse(r, "observation covariance")?;
    let post_prec = &prec + h.transpose() * &rinv * h;
    let eta = &prec * mu + h.transpose() * &rinv * (y - b);
    let post_sigma = sym(&inverse(&post_prec, "posterior precision")?);
    let post_mu = &post_sigma * eta;
    Ok((post_mu, post_sigma))
}

// ---------------------------------------------------------------------------
// Kalman filter
// ---------------------------------------------------------------------------

/// Covariance-form Kalman update:
/// `K = ΣHᵀ(R + HΣHᵀ)⁻¹`, `μ += K(y − ŷ)`, `Σ −= K H Σ`.
pub fn kalman_update(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    yhat: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = r + h * sigma * h.transpose();
    let s_inv =
        s.try_inverse().ok_or_else(|| BongError::SingularCovariance("innovation covariance is singular".into()))?;
    let k = sigma * h.transpose() * s_inv;
    let mu_new = mu + &k * (y - yhat);
    let sigma_new = sigma - &k * h * sigma;
    Ok((mu_new, sigma_new))
}

/// Precision-form Kalman update:
/// `Σ'⁻¹ = Σ⁻¹ + HᵀR⁻¹H`, `μ' = μ + Σ'HᵀR⁻¹(y − ŷ)`.
pub fn kalman_update_precision_form(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
    yhat: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let rinv = inverse(r, "observation covariance")?;
    let prec = inverse(sigma, "prior covariance")? + h.transpose() * &rinv * h;
    let sigma_new = inverse(&prec, "posterior precision")?;
    let mu_new = mu + &sigma_new * h.transpose() * rinv * (y - yhat);
    Ok((mu_new, sigma_new))
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut xp = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        (fp - fm) / (2.0 * step)
    })
}

/// Central-difference Jacobian of a vector function (rows = outputs).
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut xp = x.clone();
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        cols.push((fp - fm) / (2.0 * step));
    }
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |r, c| cols[c][r])
}

/// Central-difference Hessian of a scalar function from function values,
/// symmetrized.
pub fn fd_hessian<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    let mut eval = |di: (usize, f64), dj: (usize, f64)| {
        xp[di.0] += di.1;
        xp[dj.0] += dj.1;
        let v = f(&xp);
        xp[di.0] -= di.1;
        xp[dj.0] -= dj.1;
        v
    };
    for i in 0..n {
        for j in i..n {
            let pp = eval((i, step), (j, step));
            let pm = eval((i, step), (j, -step));
            let mp = eval((i, -step), (j, step));
            let mm = eval((i, -step), (j, -step));
            let v = (pp - pm - mp + mm) / (4.0 * step * step);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

// ---------------------------------------------------------------------------
// Explicit Fisher natural-gradient step
// ---------------------------------------------------------------------------

/// Largest P accepted by [`dense_fisher_ngd_step`].
pub const FISHER_CAP: usize = 4;

/// Natural-gradient step in the moment chart `(μ, vec Σ)` with the inverse
/// Fisher assembled explicitly as the block matrix `[Σ, 0; 0, 2 Σ⊗Σ]` and
/// applied to the gradient `(g, vec(½G))`.
pub fn dense_fisher_ngd_step(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    g: &DVector<f64>,
    big_g: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = mu.len();
    if p > FISHER_CAP {
        return Err(BongError::CapExceeded { size: p, cap: FISHER_CAP });
    }
    let n = p + p * p;
    let mut f_inv = DMatrix::zeros(n, n);
    f_inv.view_mut((0, 0), (p, p)).copy_from(sigma);
    f_inv.view_mut((p, p), (p * p, p * p)).copy_from(&(sigma.kronecker(sigma) * 2.0));
    let mut grad = DVector::zeros(n);
    grad.rows_mut(0, p).copy_from(g);
    for (k, v) in (big_g * 0.5).iter().enumerate() {
        grad[p + k] = *v;
    }
    let step = f_inv * grad;
    let mu_new = mu + step.rows(0, p);
    let sigma_new = sigma + DMatrix::from_column_slice(p, p, step.rows(p, p * p).as_slice());
    Ok((mu_new, sigma_new))
}

// ---------------------------------------------------------------------------
// Dense references for the diagonal-plus-low-rank family
// ---------------------------------------------------------------------------

/// Dense precision `Diag(ups) + W Wᵀ`.
pub fn dense_dlr_precision(ups: &DVector<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(ups) + w * w.transpose()
}

/// Dense rank-`r` projection: keep the top-`r` eigenpairs of `W̃W̃ᵀ` and fold
/// the diagonal of the remainder into the diagonal part. Returns the total
/// projected precision.
pub fn dense_dlr_projection(ups_tilde: &DVector<f64>, w_tilde: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let outer = w_tilde * w_tilde.transpose();
    let eig = outer.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..outer.nrows()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let p = outer.nrows();
    let mut low = DMatrix::zeros(p, p);
    for &k in idx.iter().take(r) {
        let v = eig.eigenvectors.column(k);
        low += v * v.transpose() * eig.eigenvalues[k];
    }
    let ups = ups_tilde + (outer - &low).diagonal();
    DMatrix::from_diagonal(&ups) + low
}

/// Dense BONG for the DLR family given the low-rank Hessian factor `c`
/// (`G = −C Cᵀ`). Returns the mean and total precision after projection.
pub fn dense_bong_dlr(
    mu: &DVector<f64>,
    ups: &DVector<f64>,
    w: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prec = dense_dlr_precision(ups, w) + c * c.transpose();
    let mu_new = mu + inverse(&prec, "posterior precision")? * g;
    let mut w_tilde = DMatrix::zeros(mu.len(), w.ncols() + c.ncols());
    w_tilde.columns_mut(0, w.ncols()).copy_from(w);
    w_tilde.columns_mut(w.ncols(), c.ncols()).copy_from(c);
    Ok((mu_new, dense_dlr_projection(ups, &w_tilde, w.ncols())))
}

/// Dense BLR inner step for the DLR family. Returns the mean and the total
/// precision after projection.
#[allow(clippy::too_many_arguments)]
pub fn dense_blr_dlr(
    prior: (&DVector<f64>, &DVector<f64>, &DMatrix<f64>),
    iterate: (&DVector<f64>, &DVector<f64>, &DMatrix<f64>),
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    alpha: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mu_p, ups_p, w_p) = prior;
    let (mu, ups, w) = iterate;
    let prec_p = dense_dlr_precision(ups_p, w_p);
    let prec = dense_dlr_precision(ups, w);
    let new_prec = &prec * (1.0 - alpha) + &prec_p * alpha + c * c.transpose() * alpha;
    let mu_new = mu + inverse(&new_prec, "iterate precision")? * (&prec_p * (mu_p - mu) + g) * alpha;
    let p = mu.len();
    let k = w.ncols() + w_p.ncols() + c.ncols();
    let mut w_tilde = DMatrix::zeros(p, k);
    w_tilde.columns_mut(0, w.ncols()).copy_from(&(w * (1.0 - alpha).sqrt()));
    w_tilde.columns_mut(w.ncols(), w_p.ncols()).copy_from(&(w_p * alpha.sqrt()));
    w_tilde.columns_mut(w.ncols() + w_p.ncols(), c.ncols()).copy_from(&(c * alpha.sqrt()));
    let ups_tilde = ups * (1.0 - alpha) + ups_p * alpha;
    Ok((mu_new, dense_dlr_projection(&ups_tilde, &w_tilde, w.ncols())))
}

/// Dense BOG step for the DLR family: `μ + αg`,
/// `Υ − (α/2) diag(ΣGΣ)`, `W − α ΣGΣ W`.
pub fn dense_bog_dlr(
    mu: &DVector<f64>,
    ups: &DVector<f64>,
    w: &DMatrix<f64>,
    g: &DVector<f64>,
    big_g: &DMatrix<f64>,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let sigma = inverse(&dense_dlr_precision(ups, w), "precision")?;
    let sgs = &sigma * big_g * &sigma;
    Ok((mu + g * alpha, ups - sgs.diagonal() * (0.5 * alpha), w - sgs * w * alpha))
}

/// Dense BBB inner step for the DLR family, with
/// `X = Diag(Υ_p − Υ) + W_pW_pᵀ − WWᵀ − G`:
/// `μ + α(Λ_p(μ_p − μ) + g)`, `Υ + (α/2) diag(ΣXΣ)`, `W + α ΣXΣ W`.
pub fn dense_bbb_dlr(
    prior: (&DVector<f64>, &DVector<f64>, &DMatrix<f64>),
    iterate: (&DVector<f64>, &DVector<f64>, &DMatrix<f64>),
    g: &DVector<f64>,
    big_g: &DMatrix<f64>,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let (mu_p, ups_p, w_p) = prior;
    let (mu, ups, w) = iterate;
    let prec_p = dense_dlr_precision(ups_p, w_p);
    let sigma = inverse(&dense_dlr_precision(ups, w), "precision")?;
    let x = DMatrix::from_diagonal(&(ups_p - ups)) + w_p * w_p.transpose() - w * w.transpose() - big_g;
    let sxs = &sigma * x * &sigma;
    let mu_new = mu + (prec_p * (mu_p - mu) + g) * alpha;
    Ok((mu_new, ups + sxs.diagonal() * (0.5 * alpha), w + sxs * w * alpha))
}
