//! Gaussian belief-state families: full covariance, diagonal, and
//! diagonal-plus-low-rank (DLR) precision.
//!
//! Storage is always in moment-like coordinates: `(μ, Σ)` for FC, `(μ, σ²)`
//! for diagonal and `(μ, Υ, W)` with precision `Diag(Υ) + W Wᵀ` for DLR. The
//! natural/moment distinction only selects which update equations apply and
//! lives in [`FamilyTag`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, BongError, Result};
use crate::linalg::{cholesky, is_symmetric, row_sq_norms, spd_inverse, sym_eigen_desc};

/// Relative tolerance used when validating covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Full-covariance Gaussian `N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussFC {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Diagonal Gaussian `N(μ, Diag(σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussDiag {
    pub mu: DVector<f64>,
    pub sigma2: DVector<f64>,
}

/// Gaussian with diagonal-plus-low-rank precision `Diag(Υ) + W Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussDLR {
    pub mu: DVector<f64>,
    pub ups: DVector<f64>,
    pub w: DMatrix<f64>,
}

/// A belief state in one of the three structural forms.
#[derive(Debug, Clone, PartialEq)]
pub enum BeliefState {
    FC(GaussFC),
    Diag(GaussDiag),
    DLR(GaussDLR),
}

/// Covariance structure of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    FC,
    Diag,
    DLR,
}

/// Coordinate system in which the gradient-based algorithms take their steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    Natural,
    Moment,
}

/// Family selector: structure plus parameterization.
///
/// DLR has a single chart `(μ, Υ, W)`; its tag always carries
/// [`Parameterization::Natural`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyTag {
    pub structure: Structure,
    pub param: Parameterization,
}

impl FamilyTag {
    pub const FC_NAT: FamilyTag = FamilyTag { structure: Structure::FC, param: Parameterization::Natural };
    pub const FC_MOM: FamilyTag = FamilyTag { structure: Structure::FC, param: Parameterization::Moment };
    pub const DIAG_NAT: FamilyTag = FamilyTag { structure: Structure::Diag, param: Parameterization::Natural };
    pub const DIAG_MOM: FamilyTag = FamilyTag { structure: Structure::Diag, param: Parameterization::Moment };
    pub const DLR: FamilyTag = FamilyTag { structure: Structure::DLR, param: Parameterization::Natural };

    /// Parse the CLI names `fc`, `fc_mom`, `diag`, `diag_mom`, `dlr`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fc" => Ok(Self::FC_NAT),
            "fc_mom" => Ok(Self::FC_MOM),
            "diag" => Ok(Self::DIAG_NAT),
            "diag_mom" => Ok(Self::DIAG_MOM),
            "dlr" => Ok(Self::DLR),
            other => Err(BongError::InvalidConfig(format!("unknown family '{other}'"))),
        }
    }

    /// Inverse of [`FamilyTag::parse`].
    pub fn name(&self) -> &'static str {
        match (self.structure, self.param) {
            (Structure::FC, Parameterization::Natural) => "fc",
            (Structure::FC, Parameterization::Moment) => "fc_mom",
            (Structure::Diag, Parameterization::Natural) => "diag",
            (Structure::Diag, Parameterization::Moment) => "diag_mom",
            (Structure::DLR, _) => "dlr",
        }
    }
}

impl GaussFC {
    /// Validated constructor: `Σ` must be symmetric and positive definite.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(BongError::ShapeError(format!(
                "covariance must be {p}x{p}, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let s = GaussFC { mu, sigma };
        s.validate()?;
        Ok(s)
    }

    /// Check the type invariants.
    pub fn validate(&self) -> Result<()> {
        if self.mu.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(BongError::NotPositiveDefinite("non-finite mean".into()));
        }
        if !is_symmetric(&self.sigma, SYMMETRY_TOL) {
            return Err(BongError::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        if cholesky(&self.sigma).is_none() {
            return Err(BongError::NotPositiveDefinite("covariance has a non-positive eigenvalue".into()));
        }
        Ok(())
    }

    /// Natural parameters `(Σ⁻¹μ, −½Σ⁻¹)`.
    pub fn to_natural(&self) -> Result<FcNatural> {
        let prec = spd_inverse(&self.sigma)
            .ok_or_else(|| BongError::SingularCovariance("covariance cannot be inverted".into()))?;
        Ok(FcNatural { eta1: &prec * &self.mu, eta2: prec * -0.5 })
    }

    /// Rebuild the moment form from natural parameters.
    pub fn from_natural(nat: &FcNatural) -> Result<Self> {
        let prec = &nat.eta2 * -2.0;
        let sigma =
            spd_inverse(&prec).ok_or_else(|| BongError::SingularCovariance("precision cannot be inverted".into()))?;
        let mu = &sigma * &nat.eta1;
        GaussFC::new(mu, sigma)
    }
}

impl GaussDiag {
    /// Validated constructor: all variances must be positive and finite.
    pub fn new(mu: DVector<f64>, sigma2: DVector<f64>) -> Result<Self> {
        check_len("variance vector", sigma2.len(), mu.len())?;
        let s = GaussDiag { mu, sigma2 };
        s.validate()?;
        Ok(s)
    }

    /// Check the type invariants.
    pub fn validate(&self) -> Result<()> {
        if self.mu.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(BongError::NotPositiveDefinite("non-finite mean".into()));
        }
        if let Some(i) = self.sigma2.as_slice().iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BongError::NotPositiveDefinite(format!("variance entry {i} is {}", self.sigma2[i])));
        }
        Ok(())
    }

    /// Elementwise natural parameters `(μ/σ², −1/(2σ²))`.
    pub fn to_natural(&self) -> Result<DiagNatural> {
        if self.sigma2.iter().any(|v| *v == 0.0) {
            return Err(BongError::SingularCovariance("zero variance".into()));
        }
        Ok(DiagNatural { eta1: self.mu.component_div(&self.sigma2), eta2: self.sigma2.map(|s| -0.5 / s) })
    }

    /// Rebuild the moment form from natural parameters.
    pub fn from_natural(nat: &DiagNatural) -> Result<Self> {
        if nat.eta2.iter().any(|v| *v == 0.0) {
            return Err(BongError::SingularCovariance("zero precision".into()));
        }
        let sigma2 = nat.eta2.map(|e| -0.5 / e);
        let mu = nat.eta1.component_mul(&sigma2);
        GaussDiag::new(mu, sigma2)
    }
}

impl GaussDLR {
    /// Validated constructor: `Υ > 0` elementwise and `R ≤ P`.
    pub fn new(mu: DVector<f64>, ups: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        check_len("diagonal precision", ups.len(), mu.len())?;
        check_len("low-rank factor rows", w.nrows(), mu.len())?;
        if w.ncols() > mu.len() {
            return Err(BongError::ShapeError(format!("rank {} exceeds dimension {}", w.ncols(), mu.len())));
        }
        let s = GaussDLR { mu, ups, w };
        s.validate()?;
        Ok(s)
    }

    /// Check the type invariants.
    pub fn validate(&self) -> Result<()> {
        if self.mu.as_slice().iter().any(|v| !v.is_finite()) || self.w.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(BongError::NotPositiveDefinite("non-finite mean or low-rank factor".into()));
        }
        if let Some(i) = self.ups.as_slice().iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BongError::NotPositiveDefinite(format!("diagonal precision entry {i} is {}", self.ups[i])));
        }
        Ok(())
    }

    /// Rank of the low-rank factor.
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// Dense precision `Diag(Υ) + W Wᵀ`.
    pub fn dense_precision(&self) -> DMatrix<f64> {
        let mut prec = &self.w * self.w.transpose();
        for i in 0..self.ups.len() {
            prec[(i, i)] += self.ups[i];
        }
        prec
    }

    /// Precision-vector product `(Diag(Υ) + W Wᵀ) v` in O(PR).
    pub fn precision_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.ups.component_mul(v) + &self.w * (self.w.tr_mul(v))
    }

    /// Covariance-vector product `Σ v` via the Woodbury identity.
    pub fn cov_mul(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        dlr_woodbury_solve(&self.ups, &self.w, v)
    }

    /// Covariance-matrix product `Σ V` via the Woodbury identity.
    pub fn cov_mul_mat(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        dlr_woodbury_solve_mat(&self.ups, &self.w, v)
    }
}

/// Natural parameters of a full-covariance Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct FcNatural {
    /// `Σ⁻¹μ`
    pub eta1: DVector<f64>,
    /// `−½Σ⁻¹`
    pub eta2: DMatrix<f64>,
}

/// Natural parameters of a diagonal Gaussian (elementwise).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagNatural {
    /// `μ / σ²`
    pub eta1: DVector<f64>,
    /// `−1 / (2σ²)`
    pub eta2: DVector<f64>,
}

/// Natural parameters of a FC or diagonal state.
#[derive(Debug, Clone, PartialEq)]
pub enum NaturalParams {
    FC(FcNatural),
    Diag(DiagNatural),
}

/// Convert to natural parameters and back.
///
/// Returns the natural pair together with the state rebuilt from it, so
/// callers can check that the map is a bijection on valid states. DLR states
/// have no separate natural chart and yield a `ShapeError`.
pub fn nat_mom_roundtrip(state: &BeliefState) -> Result<(NaturalParams, BeliefState)> {
    match state {
        BeliefState::FC(s) => {
            let nat = s.to_natural()?;
            let back = GaussFC::from_natural(&nat)?;
            Ok((NaturalParams::FC(nat), BeliefState::FC(back)))
        }
        BeliefState::Diag(s) => {
            let nat = s.to_natural()?;
            let back = GaussDiag::from_natural(&nat)?;
            Ok((NaturalParams::Diag(nat), BeliefState::Diag(back)))
        }
        BeliefState::DLR(_) => {
            Err(BongError::ShapeError("the DLR family has no separate natural-parameter chart".into()))
        }
    }
}

impl BeliefState {
    /// Parameter dimension P.
    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    /// Mean vector.
    pub fn mean(&self) -> &DVector<f64> {
        match self {
            BeliefState::FC(s) => &s.mu,
            BeliefState::Diag(s) => &s.mu,
            BeliefState::DLR(s) => &s.mu,
        }
    }

    /// Structural form.
    pub fn structure(&self) -> Structure {
        match self {
            BeliefState::FC(_) => Structure::FC,
            BeliefState::Diag(_) => Structure::Diag,
            BeliefState::DLR(_) => Structure::DLR,
        }
    }

    /// Check the invariants of the underlying family.
    pub fn validate(&self) -> Result<()> {
        match self {
            BeliefState::FC(s) => s.validate(),
            BeliefState::Diag(s) => s.validate(),
            BeliefState::DLR(s) => s.validate(),
        }
    }

    /// Isotropic prior `N(μ, σ₀² I)` in the requested structure. DLR states
    /// start with `Υ = 1/σ₀²` and a zero low-rank factor of the given rank.
    pub fn isotropic(structure: Structure, mu: DVector<f64>, var0: f64, rank: usize) -> Result<Self> {
        if !(var0 > 0.0 && var0.is_finite()) {
            return Err(BongError::InvalidConfig(format!("prior variance must be positive, got {var0}")));
        }
        let p = mu.len();
        Ok(match structure {
            Structure::FC => BeliefState::FC(GaussFC::new(mu, DMatrix::identity(p, p) * var0)?),
            Structure::Diag => BeliefState::Diag(GaussDiag::new(mu, DVector::from_element(p, var0))?),
            Structure::DLR => {
                BeliefState::DLR(GaussDLR::new(mu, DVector::from_element(p, 1.0 / var0), DMatrix::zeros(p, rank))?)
            }
        })
    }

    /// Dense covariance matrix (DLR inverts its precision densely).
    pub fn dense_cov(&self) -> Result<DMatrix<f64>> {
        match self {
            BeliefState::FC(s) => Ok(s.sigma.clone()),
            BeliefState::Diag(s) => Ok(DMatrix::from_diagonal(&s.sigma2)),
            BeliefState::DLR(s) => spd_inverse(&s.dense_precision())
                .ok_or_else(|| BongError::SingularCovariance("DLR precision cannot be inverted".into())),
        }
    }

    /// Dense FC view of the state.
    pub fn to_fc(&self) -> Result<GaussFC> {
        Ok(GaussFC { mu: self.mean().clone(), sigma: self.dense_cov()? })
    }

    /// Marginal variances `diag(Σ)`.
    pub fn marginal_variances(&self) -> Result<DVector<f64>> {
        match self {
            BeliefState::FC(s) => Ok(s.sigma.diagonal()),
            BeliefState::Diag(s) => Ok(s.sigma2.clone()),
            BeliefState::DLR(s) => {
                let (v, _) = dlr_cov_factor(&s.ups, &s.w)?;
                let vv = row_sq_norms(&v);
                Ok(s.ups.map(|u| 1.0 / u) - vv)
            }
        }
    }

    /// Covariance-matrix product `Σ M`.
    pub fn cov_mul_mat(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("covariance product rows", m.nrows(), self.dim())?;
        match self {
            BeliefState::FC(s) => Ok(&s.sigma * m),
            BeliefState::Diag(s) => Ok(crate::linalg::scale_rows(m, &s.sigma2)),
            BeliefState::DLR(s) => s.cov_mul_mat(m),
        }
    }

    /// Sandwich product `H Σ Hᵀ` for a C×P matrix `H`, without forming Σ for
    /// the structured families.
    pub fn cov_sandwich(&self, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("sandwich columns", h.ncols(), self.dim())?;
        let sht = self.cov_mul_mat(&h.transpose())?;
        let mut out = h * sht;
        crate::linalg::symmetrize(&mut out);
        Ok(out)
    }
}

/// `(Diag(ups) + W Wᵀ)⁻¹ v` in O(K²P + K³) via the Woodbury identity.
pub fn dlr_woodbury_solve(ups: &DVector<f64>, w: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("right-hand side", v.len(), ups.len())?;
    let vm = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let out = dlr_woodbury_solve_mat(ups, w, &vm)?;
    Ok(out.column(0).into_owned())
}

/// Multi-right-hand-side form of [`dlr_woodbury_solve`].
pub fn dlr_woodbury_solve_mat(ups: &DVector<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = ups.len();
    check_len("low-rank factor rows", w.nrows(), p)?;
    check_len("right-hand side rows", v.nrows(), p)?;
    if ups.as_slice().iter().any(|u| !(*u > 0.0)) {
        return Err(BongError::NotPositiveDefinite("diagonal precision must be positive".into()));
    }
    let inv_u = ups.map(|u| 1.0 / u);
    let uv = crate::linalg::scale_rows(v, &inv_u);
    if w.ncols() == 0 {
        return Ok(uv);
    }
    let uw = crate::linalg::scale_rows(w, &inv_u);
    let mut inner = crate::linalg::tr_mul(w, &uw);
    for i in 0..inner.nrows() {
        inner[(i, i)] += 1.0;
    }
    let ch = cholesky(&inner).ok_or(BongError::SingularInnerSystem)?;
    let rhs = crate::linalg::tr_mul(w, &uv);
    let z = ch.solve(&rhs);
    Ok(uv - uw * z)
}

/// Factor `V` with `Σ = Diag(1/Υ) − V Vᵀ` for a DLR precision, plus
/// `Υ⁻¹`. Lets diagonal-of-sandwich quantities be formed in O(PR²).
pub fn dlr_cov_factor(ups: &DVector<f64>, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let inv_u = ups.map(|u| 1.0 / u);
    if w.ncols() == 0 {
        return Ok((DMatrix::zeros(ups.len(), 0), inv_u));
    }
    let uw = crate::linalg::scale_rows(w, &inv_u);
    let mut inner = crate::linalg::tr_mul(w, &uw);
    for i in 0..inner.nrows() {
        inner[(i, i)] += 1.0;
    }
    let ch = cholesky(&inner).ok_or(BongError::SingularInnerSystem)?;
    // inner⁻¹ = L⁻ᵀ L⁻¹, so V = Υ⁻¹ W L⁻ᵀ gives V Vᵀ = Υ⁻¹ W inner⁻¹ Wᵀ Υ⁻¹.
    let l = ch.l();
    let vt = l.solve_lower_triangular(&uw.transpose()).ok_or(BongError::SingularInnerSystem)?;
    Ok((vt.transpose(), inv_u))
}

/// Project `Diag(ups_tilde) + W̃ W̃ᵀ` back to rank `r`.
///
/// Keeps the top-`r` left singular directions of `W̃` scaled by their
/// singular values, and moves the diagonal of the discarded part into `Υ` so
/// that the diagonal of the total precision is preserved exactly.
///
/// The right singular vectors are obtained from the K×K Gram matrix
/// `W̃ᵀW̃`, which keeps the cost at O(PK²) with a tiny eigenproblem; then
/// `W = W̃ V[:, :r]` equals `U[:, :r] Λ[:r]`.
pub fn dlr_svd_project(
    ups_tilde: &DVector<f64>,
    w_tilde: &DMatrix<f64>,
    r: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = ups_tilde.len();
    check_len("low-rank factor rows", w_tilde.nrows(), p)?;
    let k = w_tilde.ncols();
    if k < r {
        return Err(BongError::ShapeError(format!("cannot project {k} columns to rank {r}")));
    }
    if ups_tilde.as_slice().iter().any(|u| !(*u > 0.0)) {
        return Err(BongError::NotPositiveDefinite("diagonal precision must be positive".into()));
    }
    if r == 0 {
        return Ok((ups_tilde + row_sq_norms(w_tilde), DMatrix::zeros(p, 0)));
    }
    let gram = crate::linalg::tr_mul(w_tilde, w_tilde);
    let (_, vecs) = sym_eigen_desc(&gram);
    let w = w_tilde * vecs.columns(0, r);
    let ups = ups_tilde + row_sq_norms(w_tilde) - row_sq_norms(&w);
    Ok((ups, w))
}

/// Coefficient `(1 − (1+λ)^(−1/2)) / λ` of the fast DLR sampler.
///
/// Evaluated as `1 / (√(1+λ) (√(1+λ) + 1))`, which is the same quantity
/// without the cancellation near λ = 0 and takes its limit ½ there.
pub fn dlr_sample_coefficient(lambda: f64) -> f64 {
    let s = (1.0 + lambda.max(0.0)).sqrt();
    1.0 / (s * (s + 1.0))
}

/// Draw `m` parameter vectors from the state.
///
/// FC uses the Cholesky factor of Σ, diagonal draws elementwise, and DLR uses
/// the O(R(R+M)P) route that never forms a P×P matrix.
pub fn sample<R: Rng + ?Sized>(state: &BeliefState, m: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    if m == 0 {
        return Err(BongError::InvalidConfig("sample count must be at least 1".into()));
    }
    let p = state.dim();
    let draw = |rng: &mut R| DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    match state {
        BeliefState::FC(s) => {
            let ch = cholesky(&s.sigma)
                .ok_or_else(|| BongError::NotPositiveDefinite("covariance Cholesky failed".into()))?;
            let l = ch.l();
            Ok((0..m).map(|_| &s.mu + &l * draw(rng)).collect())
        }
        BeliefState::Diag(s) => {
            s.validate()?;
            let sd = s.sigma2.map(f64::sqrt);
            Ok((0..m).map(|_| &s.mu + sd.component_mul(&draw(rng))).collect())
        }
        BeliefState::DLR(s) => {
            s.validate()?;
            let inv_sqrt = s.ups.map(|u| 1.0 / u.sqrt());
            let v = crate::linalg::scale_rows(&s.w, &inv_sqrt);
            let (lam, q) = sym_eigen_desc(&crate::linalg::tr_mul(&v, &v));
            let coef = lam.map(dlr_sample_coefficient);
            let vq = &v * &q;
            Ok((0..m)
                .map(|_| {
                    let eps = draw(rng);
                    let t = vq.tr_mul(&eps).component_mul(&coef);
                    let inner = eps - &vq * t;
                    &s.mu + inv_sqrt.component_mul(&inner)
                })
                .collect())
        }
    }
}

/// KL(q1 ‖ q2) between two Gaussian belief states.
///
/// Diagonal pairs use the elementwise formula; every other combination is
/// expanded densely (desk-scale dimensions only).
pub fn kl_divergence(q1: &BeliefState, q2: &BeliefState) -> Result<f64> {
    if q1.dim() != q2.dim() {
        return Err(BongError::ShapeError(format!("KL between dimensions {} and {}", q1.dim(), q2.dim())));
    }
    if let (BeliefState::Diag(a), BeliefState::Diag(b)) = (q1, q2) {
        let mut kl = 0.0;
        for i in 0..a.mu.len() {
            let d = a.mu[i] - b.mu[i];
            let ratio = a.sigma2[i] / b.sigma2[i];
            kl += 0.5 * (ratio + d * d / b.sigma2[i] - 1.0 - ratio.ln());
        }
        return Ok(kl.max(0.0));
    }
    let s1 = q1.dense_cov()?;
    let s2 = q2.dense_cov()?;
    let ch1 = cholesky(&s1).ok_or_else(|| BongError::NotPositiveDefinite("first covariance".into()))?;
    let ch2 = cholesky(&s2).ok_or_else(|| BongError::NotPositiveDefinite("second covariance".into()))?;
    let p = q1.dim() as f64;
    let trace = ch2.solve(&s1).trace();
    let d = q2.mean() - q1.mean();
    let maha = d.dot(&ch2.solve(&d));
    Ok((0.5 * (trace + maha - p + ch2.ln_determinant() - ch1.ln_determinant())).max(0.0))
}
