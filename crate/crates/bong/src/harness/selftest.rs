//! Quick oracle suite run by `bong selftest`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::estimators::{EstimatorCfg, EstimatorKind, GradEstimate, HessianForm};
use crate::families::{BeliefState, FamilyTag, GaussFC, Parameterization, Structure};
use crate::linalg::{max_abs, max_abs_vec};
use crate::obs::ObsModel;
use crate::oracles::{dense_fisher_ngd_step, exact_linear_gaussian_update, fd_gradient, kalman_update};
use crate::predictor::{grad_loglik_theta, jacobian_h, Activation, MlpSpec};
use crate::updaters::{bong_step, update, Algorithm, AlgorithmCfg, PsdPolicy};

use super::datasets::{synth_linreg, synth_nonlin};

/// Outcome of one self-test check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed discrepancy and the tolerance it was held to.
    pub detail: String,
}

fn check(name: &'static str, err: Result<f64>, tol: f64) -> CheckResult {
    match err {
        Ok(e) => CheckResult { name, passed: e <= tol, detail: format!("max error {e:.3e} (tolerance {tol:.0e})") },
        Err(e) => CheckResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn bong_cfg(family: FamilyTag) -> AlgorithmCfg {
    AlgorithmCfg::new(Algorithm::Bong, family, EstimatorCfg::new(EstimatorKind::LinHess))
}

/// BONG-FC-Nat on a 3-D linear-Gaussian stream against exact Bayes.
fn conjugate_linear() -> Result<f64> {
    let data = synth_linreg(3, 30, 0.5, 11)?;
    let spec = MlpSpec::linear(3, 1)?;
    let model = ObsModel::gaussian_scalar(0.25)?;
    let cfg = bong_cfg(FamilyTag::FC_NAT);
    let p = spec.n_params();
    let mut state = BeliefState::isotropic(Structure::FC, DVector::zeros(p), 1.0, 0)?;
    let mut mu = DVector::zeros(p);
    let mut sigma = DMatrix::identity(p, p);
    let mut worst: f64 = 0.0;
    for (t, (x, y)) in data.records.iter().enumerate() {
        state = update(&state, &spec, &model, x, y, &cfg, 0, t + 1)?;
        let h = spec.jacobian_f(&mu, x)?;
        let b = spec.forward(&DVector::zeros(p), x)?;
        let r = DMatrix::from_element(1, 1, 0.25);
        (mu, sigma) = exact_linear_gaussian_update(&mu, &sigma, &h, &b, &r, y)?;
        worst = worst.max(max_abs_vec(&(state.mean() - &mu)));
        worst = worst.max(max_abs(&(state.dense_cov()? - &sigma)));
    }
    Ok(worst)
}

/// BONG-FC-Nat-LIN-HESS on a small MLP against the Kalman filter linearized
/// at each prior mean.
fn kalman_recovery() -> Result<f64> {
    let data = synth_nonlin(2, 40, 3)?;
    let spec = MlpSpec::new(vec![2, 4, 1], Activation::Tanh)?;
    let model = ObsModel::gaussian_scalar(0.1)?;
    let cfg = bong_cfg(FamilyTag::FC_NAT);
    let mu0 = spec.init(5);
    let p = spec.n_params();
    let mut state = BeliefState::isotropic(Structure::FC, mu0.clone(), 1.0, 0)?;
    let mut mu = mu0;
    let mut sigma = DMatrix::identity(p, p);
    let r = DMatrix::from_element(1, 1, 0.1);
    let mut worst: f64 = 0.0;
    for (t, (x, y)) in data.records.iter().enumerate() {
        state = update(&state, &spec, &model, x, y, &cfg, 0, t + 1)?;
        let h = jacobian_h(&spec, &model, &mu, x)?;
        let yhat = spec.forward(&mu, x)?;
        (mu, sigma) = kalman_update(&mu, &sigma, &h, &r, y, &yhat)?;
        worst = worst.max(max_abs_vec(&(state.mean() - &mu)));
        worst = worst.max(max_abs(&(state.dense_cov()? - &sigma)));
    }
    Ok(worst)
}

/// Explicit Fisher-preconditioned step in the moment chart against the
/// closed-form BONG-FC moment update.
fn mirror_descent() -> Result<f64> {
    let mu = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, -0.1, 0.1, -0.1, 0.6]);
    let g = DVector::from_vec(vec![0.4, -0.7, 0.2]);
    let b = DMatrix::from_row_slice(3, 2, &[0.3, 0.1, -0.2, 0.4, 0.1, 0.2]);
    let big_g = -(&b * b.transpose());
    let est = GradEstimate { g: g.clone(), hess: HessianForm::Dense(big_g.clone()) };
    let prior = BeliefState::FC(GaussFC::new(mu.clone(), sigma.clone())?);
    let closed = bong_step(&prior, Parameterization::Moment, &est, &PsdPolicy::default())?;
    let (mu_ref, sigma_ref) = dense_fisher_ngd_step(&mu, &sigma, &g, &big_g)?;
    Ok(max_abs_vec(&(closed.mean() - mu_ref)).max(max_abs(&(closed.dense_cov()? - sigma_ref))))
}

/// Backpropagated log-likelihood gradient against central differences.
fn gradient_fd() -> Result<f64> {
    let spec = MlpSpec::new(vec![3, 5, 4], Activation::Tanh)?;
    let model = ObsModel::categorical(4)?;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let theta = spec.init(seed);
        let x = DVector::from_fn(3, |i, _| ((seed as usize + i) as f64 * 0.37).sin());
        let y = DVector::from_fn(4, |k, _| if k == seed as usize % 4 { 1.0 } else { 0.0 });
        let g = grad_loglik_theta(&spec, &model, &theta, &x, &y)?;
        let fd = fd_gradient(|th| spec.forward(th, &x).map(|f| model.loglik(&y, &f)).unwrap_or(f64::NAN), &theta, 1e-6);
        let scale = 1.0 + max_abs_vec(&fd);
        worst = worst.max(max_abs_vec(&(g - fd)) / scale);
    }
    Ok(worst)
}

/// BONG-DLR with rank equal to the dimension against BONG-FC-Nat.
fn dlr_full_rank() -> Result<f64> {
    let data = synth_linreg(3, 10, 0.3, 2)?;
    let spec = MlpSpec::linear(3, 1)?;
    let model = ObsModel::gaussian_scalar(0.2)?;
    let p = spec.n_params();
    let fc_cfg = bong_cfg(FamilyTag::FC_NAT);
    let dlr_cfg = bong_cfg(FamilyTag::DLR).with_rank(p);
    let mut fc = BeliefState::isotropic(Structure::FC, DVector::zeros(p), 1.0, 0)?;
    let mut dlr = BeliefState::isotropic(Structure::DLR, DVector::zeros(p), 1.0, p)?;
    let mut worst: f64 = 0.0;
    for (t, (x, y)) in data.records.iter().enumerate() {
        fc = update(&fc, &spec, &model, x, y, &fc_cfg, 0, t + 1)?;
        dlr = update(&dlr, &spec, &model, x, y, &dlr_cfg, 0, t + 1)?;
        worst = worst.max(max_abs_vec(&(fc.mean() - dlr.mean())));
        worst = worst.max(max_abs(&(fc.dense_cov()? - dlr.dense_cov()?)));
    }
    Ok(worst)
}

/// Run every check in order.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("conjugate linear-Gaussian, BONG-FC natural", conjugate_linear(), 1e-9),
        check("explicit-Fisher natural-gradient step vs BONG-FC moment", mirror_descent(), 1e-8),
        check("Kalman recovery, BONG-FC-Nat-LIN-HESS", kalman_recovery(), 1e-9),
        check("log-likelihood gradient vs finite differences", gradient_fd(), 1e-5),
        check("DLR at full rank vs FC natural", dlr_full_rank(), 1e-8),
    ]
}
