//! Posterior updates for every algorithm × family combination, the predict
//! step, and the streaming loop.
//!
//! * BONG: one natural-gradient step with unit rate on the expected
//!   log-likelihood, starting from the prior predictive.
//! * BLR: iterated natural-gradient steps on the variational loss.
//! * BOG: one plain gradient step on the expected log-likelihood.
//! * BBB: iterated plain gradient steps on the variational loss.
//!
//! All updates are written in moment coordinates; the natural/moment tag of
//! the family decides which flow the gradient steps follow. Structured
//! Hessians (`G = −C Cᵀ`) are consumed through Woodbury forms so that the DLR
//! family stays linear in P.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BongError, Result};
use crate::estimators::{estimate, EstimatorCfg, GradEstimate, HessianForm};
use crate::families::{
    dlr_cov_factor, dlr_svd_project, dlr_woodbury_solve, dlr_woodbury_solve_mat, BeliefState, FamilyTag, GaussDLR,
    GaussDiag, GaussFC, Parameterization, Structure,
};
use crate::linalg::{cholesky, hcat, row_sq_norms, spd_inverse, sym_eigen_desc, symmetrize};
use crate::obs::ObsModel;
use crate::predictor::MlpSpec;

/// Floor applied to eigenvalues or variances when clamping is enabled.
pub const CLAMP_FLOOR: f64 = 1e-12;

/// Default jitter magnitude when jitter is enabled without a value.
pub const DEFAULT_STATE_JITTER: f64 = 1e-8;

/// What to do when an update leaves the valid set.
///
/// The default raises `NotPositiveDefinite`. `jitter` adds `εI` to the
/// offending matrix (or `ε` to the offending vector) and retries;
/// `clamp_variance` floors eigenvalues / entries at [`CLAMP_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PsdPolicy {
    pub jitter: Option<f64>,
    pub clamp_variance: bool,
}

/// Update algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bong,
    Blr,
    Bog,
    Bbb,
}

impl Algorithm {
    /// Parse `bong`, `blr`, `bog`, `bbb`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bong" => Ok(Algorithm::Bong),
            "blr" => Ok(Algorithm::Blr),
            "bog" => Ok(Algorithm::Bog),
            "bbb" => Ok(Algorithm::Bbb),
            other => Err(BongError::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }

    /// Inverse of [`Algorithm::parse`].
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Bong => "bong",
            Algorithm::Blr => "blr",
            Algorithm::Bog => "bog",
            Algorithm::Bbb => "bbb",
        }
    }
}

/// Full description of one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmCfg {
    pub algorithm: Algorithm,
    pub family: FamilyTag,
    pub estimator: EstimatorCfg,
    /// Learning rate α (BONG always uses 1).
    pub lr: f64,
    /// Inner iterations I (BONG and BOG always use 1).
    pub iters: usize,
    /// Rank R of the DLR factor.
    pub rank: usize,
    pub psd: PsdPolicy,
}

impl AlgorithmCfg {
    /// Configuration with α = 1, I = 1, R = 0 and the default PSD policy.
    pub fn new(algorithm: Algorithm, family: FamilyTag, estimator: EstimatorCfg) -> Self {
        AlgorithmCfg { algorithm, family, estimator, lr: 1.0, iters: 1, rank: 0, psd: PsdPolicy::default() }
    }

    /// Builder-style setters.
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }
    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    /// Apply the algorithm contracts (BONG: α = 1 and I = 1; BOG: I = 1) and
    /// validate ranges.
    pub fn resolved(&self) -> Result<AlgorithmCfg> {
        let mut c = self.clone();
        match c.algorithm {
            Algorithm::Bong => {
                c.lr = 1.0;
                c.iters = 1;
            }
            Algorithm::Bog => c.iters = 1,
            Algorithm::Blr | Algorithm::Bbb => {}
        }
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(BongError::InvalidConfig(format!("learning rate must be positive, got {}", c.lr)));
        }
        if c.iters == 0 {
            return Err(BongError::InvalidConfig("iteration count must be at least 1".into()));
        }
        if c.estimator.kind.is_monte_carlo() && c.estimator.samples == 0 {
            return Err(BongError::InvalidConfig("Monte-Carlo estimators need M ≥ 1".into()));
        }
        if c.family.structure == Structure::DLR {
            c.family = FamilyTag::DLR;
            if c.algorithm == Algorithm::Blr && c.lr > 1.0 {
                return Err(BongError::InvalidConfig("BLR on the DLR family needs α ≤ 1".into()));
            }
        }
        Ok(c)
    }
}

/// Parameter dynamics between observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// Parameters are constant over time.
    #[default]
    Static,
    /// `θ_t ~ N(γ θ_{t−1}, q I)`; FC and diagonal families only.
    RandomWalk { gamma: f64, q: f64 },
}

/// Predict step: push the belief through the dynamics.
pub fn predict(state: &BeliefState, dynamics: &Dynamics) -> Result<BeliefState> {
    match *dynamics {
        Dynamics::Static => Ok(state.clone()),
        Dynamics::RandomWalk { gamma, q } => {
            if !(gamma > 0.0 && gamma <= 1.0) || !(q >= 0.0) {
                return Err(BongError::InvalidConfig(format!(
                    "random walk needs 0 < γ ≤ 1 and q ≥ 0, got γ={gamma}, q={q}"
                )));
            }
            match state {
                BeliefState::FC(s) => {
                    let mut sigma = &s.sigma * (gamma * gamma);
                    for i in 0..sigma.nrows() {
                        sigma[(i, i)] += q;
                    }
                    Ok(BeliefState::FC(GaussFC::new(&s.mu * gamma, sigma)?))
                }
                BeliefState::Diag(s) => {
                    Ok(BeliefState::Diag(GaussDiag::new(&s.mu * gamma, s.sigma2.map(|v| gamma * gamma * v + q))?))
                }
                BeliefState::DLR(_) => Err(BongError::UnsupportedDynamics(
                    "random-walk dynamics are not available for the DLR family".into(),
                )),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Validation and repair
// ---------------------------------------------------------------------------

fn repair_matrix(m: &DMatrix<f64>, policy: &PsdPolicy) -> Option<DMatrix<f64>> {
    if let Some(eps) = policy.jitter {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            out[(i, i)] += eps;
        }
        if cholesky(&out).is_some() {
            return Some(out);
        }
    }
    if policy.clamp_variance && m.iter().all(|v| v.is_finite()) {
        let (vals, vecs) = sym_eigen_desc(m);
        let floored = vals.map(|v| v.max(CLAMP_FLOOR));
        let mut out = &vecs * DMatrix::from_diagonal(&floored) * vecs.transpose();
        symmetrize(&mut out);
        return Some(out);
    }
    None
}

fn repair_vector(v: &DVector<f64>, policy: &PsdPolicy) -> Option<DVector<f64>> {
    let valid = |v: &DVector<f64>| v.iter().all(|x| *x > 0.0 && x.is_finite());
    if let Some(eps) = policy.jitter {
        let out = v.map(|x| x + eps);
        if valid(&out) {
            return Some(out);
        }
    }
    if policy.clamp_variance && v.iter().all(|x| x.is_finite()) {
        return Some(v.map(|x| x.max(CLAMP_FLOOR)));
    }
    None
}

/// Validate a covariance, applying the repair policy if needed.
fn finish_cov(mut sigma: DMatrix<f64>, what: &str, policy: &PsdPolicy) -> Result<DMatrix<f64>> {
    symmetrize(&mut sigma);
    if cholesky(&sigma).is_some() {
        return Ok(sigma);
    }
    repair_matrix(&sigma, policy)
        .ok_or_else(|| BongError::NotPositiveDefinite(format!("{what} left the positive-definite cone")))
}

/// Invert a precision matrix, applying the repair policy to the precision.
fn invert_precision(mut prec: DMatrix<f64>, what: &str, policy: &PsdPolicy) -> Result<DMatrix<f64>> {
    symmetrize(&mut prec);
    if let Some(s) = spd_inverse(&prec) {
        return Ok(s);
    }
    let fixed = repair_matrix(&prec, policy)
        .ok_or_else(|| BongError::NotPositiveDefinite(format!("{what} precision left the positive-definite cone")))?;
    spd_inverse(&fixed).ok_or_else(|| BongError::SingularCovariance(format!("{what} precision cannot be inverted")))
}

/// Validate a positive vector (variances or precisions).
fn finish_positive(v: DVector<f64>, what: &str, policy: &PsdPolicy) -> Result<DVector<f64>> {
    if v.as_slice().iter().all(|x| *x > 0.0 && x.is_finite()) {
        return Ok(v);
    }
    repair_vector(&v, policy).ok_or_else(|| BongError::NotPositiveDefinite(format!("{what} has a non-positive entry")))
}

fn fc_state(mu: DVector<f64>, sigma: DMatrix<f64>, policy: &PsdPolicy) -> Result<BeliefState> {
    let sigma = finish_cov(sigma, "covariance", policy)?;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(BongError::NotPositiveDefinite("non-finite mean".into()));
    }
    Ok(BeliefState::FC(GaussFC { mu, sigma }))
}

fn diag_state(mu: DVector<f64>, sigma2: DVector<f64>, policy: &PsdPolicy) -> Result<BeliefState> {
    let sigma2 = finish_positive(sigma2, "variance", policy)?;
    Ok(BeliefState::Diag(GaussDiag::new(mu, sigma2)?))
}

fn dlr_state(mu: DVector<f64>, ups: DVector<f64>, w: DMatrix<f64>, policy: &PsdPolicy) -> Result<BeliefState> {
    let ups = finish_positive(ups, "diagonal precision", policy)?;
    Ok(BeliefState::DLR(GaussDLR::new(mu, ups, w)?))
}

fn check_estimate(prior: &BeliefState, est: &GradEstimate) -> Result<()> {
    if est.dim() != prior.dim() {
        return Err(BongError::ShapeError(format!(
            "estimate dimension {} does not match state dimension {}",
            est.dim(),
            prior.dim()
        )));
    }
    Ok(())
}

fn dlr_factor(est: &GradEstimate) -> Result<DMatrix<f64>> {
    est.neg_outer_factor().ok_or_else(|| {
        BongError::EstimatorIncompatible("the DLR family needs a low-rank Hessian (MC-EF, LIN-EF or LIN-HESS)".into())
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(BongError::InvalidConfig(format!("learning rate must be non-negative, got {alpha}")))
    }
}

/// `Σ G Σ` for a covariance and an estimate, using the low-rank factor when
/// available.
fn sandwich_g(sigma: &DMatrix<f64>, est: &GradEstimate) -> DMatrix<f64> {
    let mut out = match &est.hess {
        HessianForm::Dense(g) => sigma * g * sigma,
        HessianForm::DiagOnly(d) => sigma * crate::linalg::scale_rows(sigma, d),
        _ => {
            let sc = sigma * est.neg_outer_factor().expect("structured form");
            -(&sc * sc.transpose())
        }
    };
    symmetrize(&mut out);
    out
}

fn same_structure(a: &BeliefState, b: &BeliefState) -> Result<()> {
    if a.structure() != b.structure() || a.dim() != b.dim() {
        return Err(BongError::ShapeError("prior and iterate must share structure and dimension".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// BONG
// ---------------------------------------------------------------------------

/// One BONG update from `prior` given the estimate computed at the prior.
pub fn bong_step(
    prior: &BeliefState,
    param: Parameterization,
    est: &GradEstimate,
    policy: &PsdPolicy,
) -> Result<BeliefState> {
    check_estimate(prior, est)?;
    let g = &est.g;
    match (prior, param) {
        (BeliefState::FC(s), Parameterization::Natural) => match est.neg_outer_factor() {
            Some(c) => {
                // Σ_t = Σ − ΣC (I + CᵀΣC)⁻¹ CᵀΣ; with C = HᵀAᵀ this is the
                // Kalman-gain form K = ΣHᵀ(R + HΣHᵀ)⁻¹, Σ_t = Σ − K H Σ.
                let sc = &s.sigma * &c;
                let mut inner = crate::linalg::tr_mul(&c, &sc);
                for i in 0..inner.nrows() {
                    inner[(i, i)] += 1.0;
                }
                let ch = cholesky(&inner).ok_or(BongError::SingularInnerSystem)?;
                let sigma = &s.sigma - &sc * ch.solve(&sc.transpose());
                let sigma = finish_cov(sigma, "covariance", policy)?;
                let mu = &s.mu + &sigma * g;
                fc_state(mu, sigma, policy)
            }
            None => {
                let prec_prior =
                    spd_inverse(&s.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
                let sigma = invert_precision(prec_prior - est.dense_g(), "posterior", policy)?;
                let mu = &s.mu + &sigma * g;
                fc_state(mu, sigma, policy)
            }
        },
        (BeliefState::FC(s), Parameterization::Moment) => {
            let mu = &s.mu + &s.sigma * g;
            let sigma = &s.sigma + sandwich_g(&s.sigma, est);
            fc_state(mu, sigma, policy)
        }
        (BeliefState::Diag(s), Parameterization::Natural) => {
            let prec = s.sigma2.map(|v| 1.0 / v) - est.diag_g();
            let prec = finish_positive(prec, "diagonal precision", policy)?;
            let sigma2 = prec.map(|v| 1.0 / v);
            let mu = &s.mu + sigma2.component_mul(g);
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::Diag(s), Parameterization::Moment) => {
            let mu = &s.mu + s.sigma2.component_mul(g);
            let s4 = s.sigma2.component_mul(&s.sigma2);
            let sigma2 = &s.sigma2 + s4.component_mul(&est.diag_g());
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::DLR(s), _) => {
            let c = dlr_factor(est)?;
            let w_tilde = hcat(&[&s.w, &c]);
            let mu = &s.mu + dlr_woodbury_solve(&s.ups, &w_tilde, g)?;
            let (ups, w) = dlr_svd_project(&s.ups, &w_tilde, s.rank())?;
            dlr_state(mu, ups, w, policy)
        }
    }
}

// ---------------------------------------------------------------------------
// BLR
// ---------------------------------------------------------------------------

/// One BLR inner iteration: natural-gradient step of size α on the
/// variational loss, from `iterate`, with the KL term anchored at `prior`.
pub fn blr_step(
    prior: &BeliefState,
    iterate: &BeliefState,
    param: Parameterization,
    est: &GradEstimate,
    alpha: f64,
    policy: &PsdPolicy,
) -> Result<BeliefState> {
    check_estimate(prior, est)?;
    check_alpha(alpha)?;
    same_structure(prior, iterate)?;
    let g = &est.g;
    match (prior, iterate, param) {
        (BeliefState::FC(p), BeliefState::FC(s), Parameterization::Natural) => {
            let prec_p =
                spd_inverse(&p.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
            let prec =
                spd_inverse(&s.sigma).ok_or_else(|| BongError::SingularCovariance("iterate covariance".into()))?;
            let new_prec = prec * (1.0 - alpha) + &prec_p * alpha - est.dense_g() * alpha;
            let sigma = invert_precision(new_prec, "iterate", policy)?;
            let rhs = &prec_p * (&p.mu - &s.mu) + g;
            let mu = &s.mu + (&sigma * rhs) * alpha;
            fc_state(mu, sigma, policy)
        }
        (BeliefState::FC(p), BeliefState::FC(s), Parameterization::Moment) => {
            let prec_p =
                spd_inverse(&p.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
            let rhs = &prec_p * (&p.mu - &s.mu) + g;
            let mu = &s.mu + (&s.sigma * rhs) * alpha;
            let pull = &s.sigma * &prec_p * &s.sigma;
            let sigma = &s.sigma * (1.0 + alpha) + (sandwich_g(&s.sigma, est) - pull) * alpha;
            fc_state(mu, sigma, policy)
        }
        (BeliefState::Diag(p), BeliefState::Diag(s), Parameterization::Natural) => {
            let prec_p = p.sigma2.map(|v| 1.0 / v);
            let prec = s.sigma2.map(|v| 1.0 / v) * (1.0 - alpha) + &prec_p * alpha - est.diag_g() * alpha;
            let prec = finish_positive(prec, "diagonal precision", policy)?;
            let sigma2 = prec.map(|v| 1.0 / v);
            let rhs = prec_p.component_mul(&(&p.mu - &s.mu)) + g;
            let mu = &s.mu + sigma2.component_mul(&rhs) * alpha;
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::Diag(p), BeliefState::Diag(s), Parameterization::Moment) => {
            let prec_p = p.sigma2.map(|v| 1.0 / v);
            let rhs = prec_p.component_mul(&(&p.mu - &s.mu)) + g;
            let mu = &s.mu + s.sigma2.component_mul(&rhs) * alpha;
            let s4 = s.sigma2.component_mul(&s.sigma2);
            let bracket = s.sigma2.map(|v| 1.0 / v) - &prec_p + est.diag_g();
            let sigma2 = &s.sigma2 + s4.component_mul(&bracket) * alpha;
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::DLR(p), BeliefState::DLR(s), _) => {
            if alpha > 1.0 {
                return Err(BongError::InvalidConfig("BLR on the DLR family needs α ≤ 1".into()));
            }
            let c = dlr_factor(est)?;
            let ups_tilde = &s.ups * (1.0 - alpha) + &p.ups * alpha;
            let w_tilde = hcat(&[&(&s.w * (1.0 - alpha).sqrt()), &(&p.w * alpha.sqrt()), &(c * alpha.sqrt())]);
            let rhs = p.precision_mul(&(&p.mu - &s.mu)) + g;
            let mu = &s.mu + dlr_woodbury_solve(&ups_tilde, &w_tilde, &rhs)? * alpha;
            let (ups, w) = dlr_svd_project(&ups_tilde, &w_tilde, s.rank())?;
            dlr_state(mu, ups, w, policy)
        }
        _ => unreachable!("structures checked above"),
    }
}

// ---------------------------------------------------------------------------
// BOG
// ---------------------------------------------------------------------------

/// One BOG update: a plain gradient step of size α on the expected
/// log-likelihood, in the family's parameterization.
pub fn bog_step(
    prior: &BeliefState,
    param: Parameterization,
    est: &GradEstimate,
    alpha: f64,
    policy: &PsdPolicy,
) -> Result<BeliefState> {
    check_estimate(prior, est)?;
    check_alpha(alpha)?;
    let g = &est.g;
    match (prior, param) {
        (BeliefState::FC(s), Parameterization::Natural) => {
            let prec_p =
                spd_inverse(&s.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
            // The gradient in −½Σ⁻¹ is 2Σgμᵀ + ΣGΣ; its first term is not
            // symmetric and is replaced by its symmetric part.
            let sg = &s.sigma * g;
            let mut outer = &sg * s.mu.transpose();
            symmetrize(&mut outer);
            let new_prec = &prec_p - outer * (4.0 * alpha) - sandwich_g(&s.sigma, est) * (2.0 * alpha);
            let sigma = invert_precision(new_prec, "posterior", policy)?;
            let eta1 = &prec_p * &s.mu + sg * alpha;
            let mu = &sigma * eta1;
            fc_state(mu, sigma, policy)
        }
        (BeliefState::FC(s), Parameterization::Moment) => {
            let mu = &s.mu + g * alpha;
            let sigma = &s.sigma + est.dense_g() * (0.5 * alpha);
            fc_state(mu, sigma, policy)
        }
        (BeliefState::Diag(s), Parameterization::Natural) => {
            let s2 = &s.sigma2;
            let s4 = s2.component_mul(s2);
            let prec = s2.map(|v| 1.0 / v)
                - s2.component_mul(&s.mu).component_mul(g) * (4.0 * alpha)
                - s4.component_mul(&est.diag_g()) * (2.0 * alpha);
            let prec = finish_positive(prec, "diagonal precision", policy)?;
            let sigma2 = prec.map(|v| 1.0 / v);
            let eta1 = s.mu.component_div(s2) + s2.component_mul(g) * alpha;
            let mu = sigma2.component_mul(&eta1);
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::Diag(s), Parameterization::Moment) => {
            let mu = &s.mu + g * alpha;
            let sigma2 = &s.sigma2 + est.diag_g() * (0.5 * alpha);
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::DLR(s), _) => {
            let c = dlr_factor(est)?;
            let b = dlr_woodbury_solve_mat(&s.ups, &s.w, &c)?;
            let mu = &s.mu + g * alpha;
            let ups = &s.ups + row_sq_norms(&b) * (0.5 * alpha);
            let w = &s.w + (&b * crate::linalg::tr_mul(&b, &s.w)) * alpha;
            dlr_state(mu, ups, w, policy)
        }
    }
}

// ---------------------------------------------------------------------------
// BBB
// ---------------------------------------------------------------------------

/// One BBB inner iteration: a plain gradient step of size α on the
/// variational loss, from `iterate`, with the KL term anchored at `prior`.
pub fn bbb_step(
    prior: &BeliefState,
    iterate: &BeliefState,
    param: Parameterization,
    est: &GradEstimate,
    alpha: f64,
    policy: &PsdPolicy,
) -> Result<BeliefState> {
    check_estimate(prior, est)?;
    check_alpha(alpha)?;
    same_structure(prior, iterate)?;
    let g = &est.g;
    match (prior, iterate, param) {
        (BeliefState::FC(p), BeliefState::FC(s), Parameterization::Natural) => {
            let prec_p =
                spd_inverse(&p.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
            let prec =
                spd_inverse(&s.sigma).ok_or_else(|| BongError::SingularCovariance("iterate covariance".into()))?;
            let n = s.mu.len();
            // Gradient of the variational objective in −½Σ⁻¹, symmetrized:
            // Σ[2Σ_p⁻¹(μ_p − μ)μᵀ + I + 2gμᵀ + (G − Σ_p⁻¹)Σ].
            let pull = &prec_p * (&p.mu - &s.mu);
            let mut grad2 = &s.sigma * ((pull + g) * s.mu.transpose() * 2.0 + DMatrix::identity(n, n))
                + sandwich_g(&s.sigma, est)
                - &s.sigma * &prec_p * &s.sigma;
            symmetrize(&mut grad2);
            let new_prec = &prec - grad2 * (2.0 * alpha);
            let sigma = invert_precision(new_prec, "iterate", policy)?;
            let eta1 = &prec * &s.mu + &s.sigma * (g + &prec_p * (&p.mu - &s.mu)) * alpha;
            let mu = &sigma * eta1;
            fc_state(mu, sigma, policy)
        }
        (BeliefState::FC(p), BeliefState::FC(s), Parameterization::Moment) => {
            let prec_p =
                spd_inverse(&p.sigma).ok_or_else(|| BongError::SingularCovariance("prior covariance".into()))?;
            let prec =
                spd_inverse(&s.sigma).ok_or_else(|| BongError::SingularCovariance("iterate covariance".into()))?;
            let mu = &s.mu + (&prec_p * (&p.mu - &s.mu) + g) * alpha;
            let sigma = &s.sigma + (prec - &prec_p + est.dense_g()) * (0.5 * alpha);
            fc_state(mu, sigma, policy)
        }
        (BeliefState::Diag(p), BeliefState::Diag(s), Parameterization::Natural) => {
            let s2 = &s.sigma2;
            let s4 = s2.component_mul(s2);
            let prec_p = p.sigma2.map(|v| 1.0 / v);
            let prec = s2.map(|v| 1.0 / v);
            let new_prec = &prec
                - s2.component_mul(&s.mu).component_mul(g) * (4.0 * alpha)
                - s4.component_mul(&est.diag_g()) * (2.0 * alpha)
                + s2.component_mul(&prec_p).component_mul(&s.mu).component_mul(&(&s.mu - &p.mu)) * (4.0 * alpha)
                + s4.component_mul(&(&prec_p - &prec)) * (2.0 * alpha);
            let new_prec = finish_positive(new_prec, "diagonal precision", policy)?;
            let sigma2 = new_prec.map(|v| 1.0 / v);
            let eta1 = s.mu.component_div(s2) + s2.component_mul(&(g + prec_p.component_mul(&(&p.mu - &s.mu)))) * alpha;
            let mu = sigma2.component_mul(&eta1);
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::Diag(p), BeliefState::Diag(s), Parameterization::Moment) => {
            let prec_p = p.sigma2.map(|v| 1.0 / v);
            let mu = &s.mu + (prec_p.component_mul(&(&p.mu - &s.mu)) + g) * alpha;
            let sigma2 = &s.sigma2 + (s.sigma2.map(|v| 1.0 / v) - &prec_p + est.diag_g()) * (0.5 * alpha);
            diag_state(mu, sigma2, policy)
        }
        (BeliefState::DLR(p), BeliefState::DLR(s), _) => {
            let c = dlr_factor(est)?;
            let mu = &s.mu + (p.precision_mul(&(&p.mu - &s.mu)) + g) * alpha;
            // Direction X = Diag(Υ_p − Υ) + W_p W_pᵀ − W Wᵀ − G, pushed through
            // Σ on both sides. With Σ = Diag(1/Υ) − V Vᵀ every term is O(PR²).
            let d = &p.ups - &s.ups;
            let (v, inv_u) = dlr_cov_factor(&s.ups, &s.w)?;
            let m = crate::linalg::tr_mul(&v, &crate::linalg::scale_rows(&v, &d));
            let du = d.component_mul(&inv_u);
            let vm = &v * &m;
            let mut diag_part = du.component_mul(&inv_u) - du.component_mul(&row_sq_norms(&v)) * 2.0;
            for i in 0..diag_part.len() {
                diag_part[i] += vm.row(i).dot(&v.row(i));
            }
            let sw = dlr_woodbury_solve_mat(&s.ups, &s.w, &s.w)?;
            let diag_sw = dlr_woodbury_solve_mat(&s.ups, &s.w, &crate::linalg::scale_rows(&sw, &d))?;
            let cols = hcat(&[&p.w, &s.w, &c]);
            let signs: Vec<f64> = (0..cols.ncols())
                .map(|k| if k >= p.w.ncols() && k < p.w.ncols() + s.w.ncols() { -1.0 } else { 1.0 })
                .collect();
            let y = dlr_woodbury_solve_mat(&s.ups, &s.w, &cols)?;
            let mut lr_diag = DVector::zeros(s.mu.len());
            let mut ys = y.clone();
            for (k, sign) in signs.iter().enumerate() {
                let col = y.column(k);
                for (o, v) in lr_diag.iter_mut().zip(col.iter()) {
                    *o += sign * v * v;
                }
                ys.column_mut(k).scale_mut(*sign);
            }
            let lr_w = ys * crate::linalg::tr_mul(&y, &s.w);
            let ups = &s.ups + (diag_part + lr_diag) * (0.5 * alpha);
            let w = &s.w + (diag_sw + lr_w) * alpha;
            dlr_state(mu, ups, w, policy)
        }
        _ => unreachable!("structures checked above"),
    }
}

// ---------------------------------------------------------------------------
// Outer loop
// ---------------------------------------------------------------------------

/// Deterministic RNG substream for estimator draws at a given step and inner
/// iteration.
pub fn step_rng(seed: u64, step: usize, iter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 16) | (iter as u64 & 0xffff));
    rng
}

/// Apply one inner iteration of the configured algorithm.
pub fn algorithm_step(
    prior: &BeliefState,
    iterate: &BeliefState,
    est: &GradEstimate,
    cfg: &AlgorithmCfg,
) -> Result<BeliefState> {
    let param = cfg.family.param;
    match cfg.algorithm {
        Algorithm::Bong => bong_step(prior, param, est, &cfg.psd),
        Algorithm::Blr => blr_step(prior, iterate, param, est, cfg.lr, &cfg.psd),
        Algorithm::Bog => bog_step(prior, param, est, cfg.lr, &cfg.psd),
        Algorithm::Bbb => bbb_step(prior, iterate, param, est, cfg.lr, &cfg.psd),
    }
}

/// Condition the prior predictive `state` on one observation `(x, y)`.
///
/// Runs I inner iterations: each draws a fresh estimate at the current
/// iterate (RNG substream keyed by `seed`, `step` and the iteration index)
/// and applies the algorithm's step.
#[allow(clippy::too_many_arguments)]
pub fn update(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &AlgorithmCfg,
    seed: u64,
    step: usize,
) -> Result<BeliefState> {
    let cfg = cfg.resolved()?;
    if state.structure() != cfg.family.structure {
        return Err(BongError::InvalidConfig(format!(
            "state structure {:?} does not match family {}",
            state.structure(),
            cfg.family.name()
        )));
    }
    let mut iterate = state.clone();
    for i in 0..cfg.iters {
        let mut rng = step_rng(seed, step, i);
        let est = estimate(&cfg.estimator, &iterate, spec, model, x, y, &mut rng)?;
        iterate = algorithm_step(state, &iterate, &est, &cfg)?;
    }
    Ok(iterate)
}

/// Main filtering loop: predict, update, and call `eval` at steps
/// `t ≡ 0 (mod eval_every)` and at the final step (every step is
/// evaluated when `eval_every` is 1; only the final step when it is 0).
///
/// `eval` receives the 1-based step, the posterior after that step, and the
/// cumulative wall-clock nanoseconds spent inside `update` so far.
#[allow(clippy::too_many_arguments)]
pub fn run_stream<T, F>(
    initial: BeliefState,
    dynamics: &Dynamics,
    stream: &[(DVector<f64>, DVector<f64>)],
    spec: &MlpSpec,
    model: &ObsModel,
    cfg: &AlgorithmCfg,
    seed: u64,
    eval_every: usize,
    mut eval: F,
) -> Result<(BeliefState, Vec<T>)>
where
    F: FnMut(usize, &BeliefState, u64) -> Result<T>,
{
    let cfg = cfg.resolved()?;
    let mut state = initial;
    let mut records = Vec::new();
    let mut elapsed: u64 = 0;
    let total = stream.len();
    for (idx, (x, y)) in stream.iter().enumerate() {
        let t = idx + 1;
        let tag = |e: BongError| BongError::AtStep { step: t, source: Box::new(e) };
        let predicted = predict(&state, dynamics).map_err(tag)?;
        let start = Instant::now();
        state = update(&predicted, spec, model, x, y, &cfg, seed, t).map_err(tag)?;
        elapsed += start.elapsed().as_nanos() as u64;
        let due = (eval_every > 0 && t % eval_every == 0) || t == total;
        if due {
            records.push(eval(t, &state, elapsed).map_err(tag)?);
        }
    }
    Ok((state, records))
}
