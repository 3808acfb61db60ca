mod common;

use bong::oracles::{
    dense_bbb_dlr, dense_blr_dlr, dense_bog_dlr, dense_bong_dlr, dense_dlr_precision, exact_linear_gaussian_update,
    kalman_update,
};
use bong::updaters::{bbb_step, blr_step, bog_step, bong_step, predict, step_rng};
use bong::{
    run_stream, update, Algorithm, AlgorithmCfg, BeliefState, BongError, Dynamics, EstimatorCfg, EstimatorKind,
    FamilyTag, GaussDLR, GaussDiag, GaussFC, GradEstimate, HessianForm, MlpSpec, ObsModel, Parameterization, PsdPolicy,
    Structure,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::RngCore;

const NAT: Parameterization = Parameterization::Natural;
const MOM: Parameterization = Parameterization::Moment;

fn zero_est(p: usize) -> GradEstimate {
    GradEstimate { g: DVector::zeros(p), hess: HessianForm::Dense(DMatrix::zeros(p, p)) }
}

fn random_states(r: &mut rand_chacha::ChaCha8Rng, p: usize) -> Vec<BeliefState> {
    vec![
        BeliefState::FC(GaussFC::new(randn_vec(r, p), random_spd(r, p)).unwrap()),
        BeliefState::Diag(GaussDiag::new(randn_vec(r, p), positive_vec(r, p, 0.5, 1.0)).unwrap()),
        BeliefState::DLR(GaussDLR::new(randn_vec(r, p), positive_vec(r, p, 0.5, 1.0), randn_mat(r, p, 2)).unwrap()),
    ]
}

fn cfg(alg: Algorithm, fam: FamilyTag, kind: EstimatorKind) -> AlgorithmCfg {
    AlgorithmCfg::new(alg, fam, EstimatorCfg::new(kind))
}

#[test]
fn config_contracts() {
    let c =
        cfg(Algorithm::Bong, FamilyTag::FC_NAT, EstimatorKind::LinHess).with_lr(0.1).with_iters(5).resolved().unwrap();
    assert_eq!((c.lr, c.iters), (1.0, 1));
    let c =
        cfg(Algorithm::Bog, FamilyTag::FC_NAT, EstimatorKind::LinHess).with_lr(0.1).with_iters(5).resolved().unwrap();
    assert_eq!((c.lr, c.iters), (0.1, 1));
    let c =
        cfg(Algorithm::Blr, FamilyTag::FC_NAT, EstimatorKind::LinHess).with_lr(0.1).with_iters(5).resolved().unwrap();
    assert_eq!((c.lr, c.iters), (0.1, 5));
    assert!(cfg(Algorithm::Bbb, FamilyTag::FC_NAT, EstimatorKind::LinHess).with_lr(0.0).resolved().is_err());
    assert!(cfg(Algorithm::Bbb, FamilyTag::FC_NAT, EstimatorKind::LinHess).with_iters(0).resolved().is_err());
    assert!(cfg(Algorithm::Blr, FamilyTag::DLR, EstimatorKind::LinHess).with_lr(1.5).resolved().is_err());
    for name in ["bong", "blr", "bog", "bbb"] {
        assert_eq!(Algorithm::parse(name).unwrap().name(), name);
    }
}

#[test]
fn static_predict_is_identity() {
    let mut r = rng(1);
    for s in random_states(&mut r, 4) {
        assert_eq!(predict(&s, &Dynamics::Static).unwrap(), s);
    }
    for s in random_states(&mut r, 4).into_iter().take(2) {
        assert_eq!(predict(&s, &Dynamics::RandomWalk { gamma: 1.0, q: 0.0 }).unwrap(), s);
    }
}

#[test]
fn random_walk_predict() {
    let s = BeliefState::isotropic(Structure::FC, DVector::from_element(2, 1.0), 1.0, 0).unwrap();
    let out = predict(&s, &Dynamics::RandomWalk { gamma: 0.9, q: 0.01 }).unwrap();
    assert_vec_close(out.mean(), &DVector::from_element(2, 0.9), 1e-15);
    assert_mat_close(&out.dense_cov().unwrap(), &(DMatrix::identity(2, 2) * 0.82), 1e-15);
    let d = BeliefState::isotropic(Structure::Diag, DVector::from_element(2, 1.0), 1.0, 0).unwrap();
    let out = predict(&d, &Dynamics::RandomWalk { gamma: 0.9, q: 0.01 }).unwrap();
    assert_vec_close(&out.marginal_variances().unwrap(), &DVector::from_element(2, 0.82), 1e-15);
    let dlr = BeliefState::isotropic(Structure::DLR, DVector::zeros(2), 1.0, 1).unwrap();
    assert!(matches!(
        predict(&dlr, &Dynamics::RandomWalk { gamma: 0.9, q: 0.01 }),
        Err(BongError::UnsupportedDynamics(_))
    ));
}

#[test]
fn bong_with_zero_estimate_keeps_prior() {
    let mut r = rng(2);
    for s in random_states(&mut r, 4) {
        let est = match s.structure() {
            Structure::DLR => {
                GradEstimate { g: DVector::zeros(4), hess: HessianForm::NegOuterCols(DMatrix::zeros(4, 1)) }
            }
            _ => zero_est(4),
        };
        for param in [NAT, MOM] {
            if s.structure() == Structure::DLR && param == MOM {
                continue;
            }
            let out = bong_step(&s, param, &est, &PsdPolicy::default()).unwrap();
            assert_vec_close(out.mean(), s.mean(), 1e-14);
            assert!(rel_err(&out.dense_cov().unwrap(), &s.dense_cov().unwrap()) < 1e-12);
        }
    }
}

#[test]
fn bong_scalar_conjugate_update() {
    // Prior N(0, 1), y = 2, R = 1, h(θ) = θ: posterior N(1, 0.5).
    let spec = MlpSpec::new(vec![0, 1], bong::Activation::Tanh).unwrap();
    let model = ObsModel::gaussian_scalar(1.0).unwrap();
    for st in [Structure::FC, Structure::Diag, Structure::DLR] {
        let fam = match st {
            Structure::FC => FamilyTag::FC_NAT,
            Structure::Diag => FamilyTag::DIAG_NAT,
            Structure::DLR => FamilyTag::DLR,
        };
        let prior = BeliefState::isotropic(st, vec1(0.0), 1.0, 1).unwrap();
        let c = cfg(Algorithm::Bong, fam, EstimatorKind::LinHess).with_rank(1);
        let post = update(&prior, &spec, &model, &DVector::zeros(0), &vec1(2.0), &c, 0, 1).unwrap();
        assert_close(post.mean()[0], 1.0, 1e-12);
        assert_close(post.dense_cov().unwrap()[(0, 0)], 0.5, 1e-12);
    }
}

#[test]
fn bong_moment_form_is_not_bayes_on_the_scalar_problem() {
    // Σ + ΣGΣ = 1 − 1 = 0: the moment-form covariance collapses, so the
    // update is rejected instead of returning an invalid state.
    let prior = BeliefState::isotropic(Structure::FC, vec1(0.0), 1.0, 0).unwrap();
    let est = GradEstimate { g: vec1(2.0), hess: HessianForm::Dense(DMatrix::from_element(1, 1, -1.0)) };
    assert!(matches!(bong_step(&prior, MOM, &est, &PsdPolicy::default()), Err(BongError::NotPositiveDefinite(_))));
    let clamped = bong_step(&prior, MOM, &est, &PsdPolicy { jitter: None, clamp_variance: true }).unwrap();
    assert_close(clamped.mean()[0], 2.0, 1e-15);
    assert_close(clamped.dense_cov().unwrap()[(0, 0)], 1e-12, 1e-18);
}

#[test]
fn bong_fc_lin_hess_is_kalman() {
    let mut r = rng(3);
    let spec = MlpSpec::linear(4, 2).unwrap();
    let rm = random_spd(&mut r, 2) * 0.3;
    let model = ObsModel::gaussian(rm.clone()).unwrap();
    let p = spec.n_params();
    let mu = randn_vec(&mut r, p);
    let sigma = random_spd(&mut r, p);
    let prior = BeliefState::FC(GaussFC::new(mu.clone(), sigma.clone()).unwrap());
    let x = randn_vec(&mut r, 4);
    let y = randn_vec(&mut r, 2);
    let post =
        update(&prior, &spec, &model, &x, &y, &cfg(Algorithm::Bong, FamilyTag::FC_NAT, EstimatorKind::LinHess), 0, 1)
            .unwrap();
    let h = spec.jacobian_f(&mu, &x).unwrap();
    let (km, ks) = kalman_update(&mu, &sigma, &h, &rm, &y, &spec.forward(&mu, &x).unwrap()).unwrap();
    assert_vec_close(post.mean(), &km, 1e-10);
    assert_mat_close(&post.dense_cov().unwrap(), &ks, 1e-10);
}

#[test]
fn bong_dlr_full_rank_equals_fc_natural() {
    let mut r = rng(4);
    for _ in 0..20 {
        let p = 6;
        let mu = randn_vec(&mut r, p);
        let ups = positive_vec(&mut r, p, 0.5, 1.0);
        let w = randn_mat(&mut r, p, p);
        let b = randn_mat(&mut r, p, 3) * 0.5;
        let est = GradEstimate { g: randn_vec(&mut r, p), hess: HessianForm::NegOuterCols(b) };
        let prec = dense_dlr_precision(&ups, &w);
        let dlr = BeliefState::DLR(GaussDLR::new(mu.clone(), ups, w).unwrap());
        let fc = BeliefState::FC(GaussFC::new(mu, prec.try_inverse().unwrap().symmetrize_copy()).unwrap());
        let a = bong_step(&dlr, NAT, &est, &PsdPolicy::default()).unwrap();
        let b = bong_step(&fc, NAT, &est, &PsdPolicy::default()).unwrap();
        // With rank K = P the projection keeps every direction.
        assert!(rel_err_vec(a.mean(), b.mean()) < 1e-8);
        assert!(rel_err(&a.dense_cov().unwrap(), &b.dense_cov().unwrap()) < 1e-8);
    }
}

trait SymmetrizeCopy {
    fn symmetrize_copy(self) -> Self;
}

impl SymmetrizeCopy for DMatrix<f64> {
    fn symmetrize_copy(self) -> Self {
        (&self + self.transpose()) * 0.5
    }
}

fn dlr_parts(s: &BeliefState) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    match s {
        BeliefState::DLR(d) => (d.mu.clone(), d.ups.clone(), d.w.clone()),
        _ => panic!("expected a DLR state"),
    }
}

#[test]
fn bong_dlr_matches_dense_projection() {
    let mut r = rng(5);
    for _ in 0..20 {
        let p = 8;
        let (mu, ups, w) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 0.5, 1.0), randn_mat(&mut r, p, 2));
        let c = randn_mat(&mut r, p, 3);
        let g = randn_vec(&mut r, p);
        let prior = BeliefState::DLR(GaussDLR::new(mu.clone(), ups.clone(), w.clone()).unwrap());
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(c.clone()) };
        let out = bong_step(&prior, NAT, &est, &PsdPolicy::default()).unwrap();
        let (m2, u2, w2) = dlr_parts(&out);
        assert_eq!(w2.ncols(), 2);
        let (dm, dprec) = dense_bong_dlr(&mu, &ups, &w, &g, &c).unwrap();
        assert!(rel_err_vec(&m2, &dm) < 1e-8);
        assert!(rel_err(&dense_dlr_precision(&u2, &w2), &dprec) < 1e-8);
    }
}

#[test]
fn bong_dlr_rejects_dense_hessian() {
    let prior = BeliefState::isotropic(Structure::DLR, DVector::zeros(3), 1.0, 1).unwrap();
    assert!(matches!(
        bong_step(&prior, NAT, &zero_est(3), &PsdPolicy::default()),
        Err(BongError::EstimatorIncompatible(_))
    ));
}

#[test]
fn blr_at_unit_rate_from_prior_equals_bong() {
    let mut r = rng(6);
    for st in [Structure::FC, Structure::Diag] {
        for _ in 0..10 {
            let p = 4;
            let prior = &random_states(&mut r, p)[if st == Structure::FC { 0 } else { 1 }];
            let b = randn_mat(&mut r, p, 2);
            let est = GradEstimate { g: randn_vec(&mut r, p), hess: HessianForm::NegOuterCols(b) };
            let a = blr_step(prior, prior, NAT, &est, 1.0, &PsdPolicy::default()).unwrap();
            let c = bong_step(prior, NAT, &est, &PsdPolicy::default()).unwrap();
            assert!(rel_err_vec(a.mean(), c.mean()) < 1e-10);
            assert!(rel_err(&a.dense_cov().unwrap(), &c.dense_cov().unwrap()) < 1e-10);
        }
    }
}

#[test]
fn blr_and_bbb_at_prior_with_zero_estimate_are_fixed_points() {
    let mut r = rng(7);
    for s in random_states(&mut r, 4) {
        let est = match s.structure() {
            Structure::DLR => {
                GradEstimate { g: DVector::zeros(4), hess: HessianForm::NegOuterCols(DMatrix::zeros(4, 1)) }
            }
            _ => zero_est(4),
        };
        let params: &[Parameterization] = if s.structure() == Structure::DLR { &[NAT] } else { &[NAT, MOM] };
        for &param in params {
            for out in [
                blr_step(&s, &s, param, &est, 0.3, &PsdPolicy::default()).unwrap(),
                bbb_step(&s, &s, param, &est, 0.3, &PsdPolicy::default()).unwrap(),
            ] {
                assert!(rel_err_vec(out.mean(), s.mean()) < 1e-12);
                assert!(rel_err(&out.dense_cov().unwrap(), &s.dense_cov().unwrap()) < 1e-10);
            }
        }
    }
}

#[test]
fn blr_dlr_matches_dense_with_two_r_plus_m_columns() {
    let mut r = rng(8);
    for _ in 0..20 {
        let p = 9;
        let rank = 2;
        let m = 3;
        let (mp, up, wp) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 0.5, 1.0), randn_mat(&mut r, p, rank));
        let (mi, ui, wi) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 0.5, 1.0), randn_mat(&mut r, p, rank));
        let c = randn_mat(&mut r, p, m);
        let g = randn_vec(&mut r, p);
        let alpha = 0.4;
        let prior = BeliefState::DLR(GaussDLR::new(mp.clone(), up.clone(), wp.clone()).unwrap());
        let iterate = BeliefState::DLR(GaussDLR::new(mi.clone(), ui.clone(), wi.clone()).unwrap());
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(c.clone()) };
        let out = blr_step(&prior, &iterate, NAT, &est, alpha, &PsdPolicy::default()).unwrap();
        let (m2, u2, w2) = dlr_parts(&out);
        let (dm, dprec) = dense_blr_dlr((&mp, &up, &wp), (&mi, &ui, &wi), &g, &c, alpha).unwrap();
        assert!(rel_err_vec(&m2, &dm) < 1e-8);
        assert!(rel_err(&dense_dlr_precision(&u2, &w2), &dprec) < 1e-8);
    }
}

#[test]
fn bog_with_zero_rate_keeps_prior() {
    let mut r = rng(9);
    for s in random_states(&mut r, 4) {
        let est = GradEstimate { g: randn_vec(&mut r, 4), hess: HessianForm::NegOuterCols(randn_mat(&mut r, 4, 2)) };
        let params: &[Parameterization] = if s.structure() == Structure::DLR { &[NAT] } else { &[NAT, MOM] };
        for &param in params {
            let out = bog_step(&s, param, &est, 0.0, &PsdPolicy::default());
            // α = 0 is either rejected as a non-positive rate or leaves the state unchanged.
            if let Ok(out) = out {
                assert!(rel_err_vec(out.mean(), s.mean()) < 1e-14);
                assert!(rel_err(&out.dense_cov().unwrap(), &s.dense_cov().unwrap()) < 1e-12);
            }
        }
    }
}

#[test]
fn bog_fc_moment_mean_shift_is_plain_gradient_step() {
    let mut r = rng(10);
    for s in random_states(&mut r, 4).into_iter().take(2) {
        let g = randn_vec(&mut r, 4);
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(randn_mat(&mut r, 4, 1) * 0.1) };
        let out = bog_step(&s, MOM, &est, 0.05, &PsdPolicy::default()).unwrap();
        assert_vec_close(out.mean(), &(s.mean() + &g * 0.05), 1e-14);
    }
}

#[test]
fn bog_dlr_matches_dense() {
    let mut r = rng(11);
    for _ in 0..20 {
        let p = 6;
        let (mu, ups, w) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 1.0, 1.0), randn_mat(&mut r, p, 2));
        let c = randn_mat(&mut r, p, 3) * 0.3;
        let g = randn_vec(&mut r, p);
        let prior = BeliefState::DLR(GaussDLR::new(mu.clone(), ups.clone(), w.clone()).unwrap());
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(c.clone()) };
        let out = bog_step(&prior, NAT, &est, 0.1, &PsdPolicy::default()).unwrap();
        let (m2, u2, w2) = dlr_parts(&out);
        let (dm, du, dw) = dense_bog_dlr(&mu, &ups, &w, &g, &(-(&c * c.transpose())), 0.1).unwrap();
        assert!(rel_err_vec(&m2, &dm) < 1e-8);
        assert!(rel_err_vec(&u2, &du) < 1e-8);
        assert!(rel_err(&w2, &dw) < 1e-8);
    }
}

#[test]
fn bbb_from_prior_moves_mean_by_gradient() {
    let mut r = rng(12);
    for s in random_states(&mut r, 4).into_iter().take(2) {
        let g = randn_vec(&mut r, 4);
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(randn_mat(&mut r, 4, 1) * 0.1) };
        let out = bbb_step(&s, &s, MOM, &est, 0.05, &PsdPolicy::default()).unwrap();
        assert_vec_close(out.mean(), &(s.mean() + &g * 0.05), 1e-14);
    }
}

#[test]
fn bbb_dlr_matches_dense() {
    let mut r = rng(13);
    for _ in 0..20 {
        let p = 8;
        let (mp, up, wp) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 1.0, 1.0), randn_mat(&mut r, p, 2));
        let (mi, ui, wi) = (randn_vec(&mut r, p), positive_vec(&mut r, p, 1.0, 1.0), randn_mat(&mut r, p, 2));
        let c = randn_mat(&mut r, p, 3) * 0.3;
        let g = randn_vec(&mut r, p);
        let prior = BeliefState::DLR(GaussDLR::new(mp.clone(), up.clone(), wp.clone()).unwrap());
        let iterate = BeliefState::DLR(GaussDLR::new(mi.clone(), ui.clone(), wi.clone()).unwrap());
        let est = GradEstimate { g: g.clone(), hess: HessianForm::NegOuterCols(c.clone()) };
        let out = bbb_step(&prior, &iterate, NAT, &est, 0.01, &PsdPolicy::default()).unwrap();
        let (m2, u2, w2) = dlr_parts(&out);
        let (dm, du, dw) = dense_bbb_dlr((&mp, &up, &wp), (&mi, &ui, &wi), &g, &(-(&c * c.transpose())), 0.01).unwrap();
        assert!(rel_err_vec(&m2, &dm) < 1e-8);
        assert!(rel_err_vec(&u2, &du) < 1e-8);
        assert!(rel_err(&w2, &dw) < 1e-8);
    }
}

#[test]
fn moment_updates_report_invalid_states() {
    let prior = BeliefState::isotropic(Structure::Diag, DVector::zeros(2), 1.0, 0).unwrap();
    let est = GradEstimate { g: DVector::zeros(2), hess: HessianForm::DiagOnly(DVector::from_element(2, -5.0)) };
    assert!(matches!(bong_step(&prior, MOM, &est, &PsdPolicy::default()), Err(BongError::NotPositiveDefinite(_))));
    let out = bong_step(&prior, MOM, &est, &PsdPolicy { jitter: None, clamp_variance: true }).unwrap();
    assert!(out.marginal_variances().unwrap().iter().all(|v| *v == 1e-12));
}

#[test]
fn blr_iterations_equal_manual_chaining() {
    let spec = MlpSpec::new(vec![2, 3, 1], bong::Activation::Tanh).unwrap();
    let model = ObsModel::gaussian_scalar(0.2).unwrap();
    let x = DVector::from_vec(vec![0.5, -1.0]);
    let y = vec1(0.8);
    let prior = BeliefState::isotropic(Structure::FC, spec.init(1), 0.5, 0).unwrap();
    let c = cfg(Algorithm::Blr, FamilyTag::FC_NAT, EstimatorKind::McEf).with_lr(0.3).with_iters(3);
    let auto = update(&prior, &spec, &model, &x, &y, &c, 9, 4).unwrap();
    let mut it = prior.clone();
    for i in 0..3 {
        let est = bong::estimate(&c.estimator, &it, &spec, &model, &x, &y, &mut step_rng(9, 4, i)).unwrap();
        it = blr_step(&prior, &it, NAT, &est, 0.3, &PsdPolicy::default()).unwrap();
    }
    assert_eq!(auto, it);
}

#[test]
fn bbb_iterations_approach_scalar_posterior() {
    let spec = MlpSpec::new(vec![0, 1], bong::Activation::Tanh).unwrap();
    let model = ObsModel::gaussian_scalar(1.0).unwrap();
    let prior = BeliefState::isotropic(Structure::FC, vec1(0.0), 1.0, 0).unwrap();
    let c = cfg(Algorithm::Bbb, FamilyTag::FC_MOM, EstimatorKind::LinHess).with_lr(0.5).with_iters(10);
    let post = update(&prior, &spec, &model, &DVector::zeros(0), &vec1(2.0), &c, 0, 1).unwrap();
    assert!((post.mean()[0] - 1.0).abs() < 1e-3, "mean {}", post.mean()[0]);
}

#[test]
fn step_rng_substreams_are_distinct() {
    let draw = |s, t, i| step_rng(s, t, i).next_u64();
    assert_eq!(draw(1, 2, 3), draw(1, 2, 3));
    assert_ne!(draw(1, 2, 3), draw(1, 2, 4));
    assert_ne!(draw(1, 2, 3), draw(1, 3, 3));
    assert_ne!(draw(1, 2, 3), draw(2, 2, 3));
}

#[test]
fn empty_stream_leaves_state_unchanged() {
    let spec = MlpSpec::linear(2, 1).unwrap();
    let model = ObsModel::gaussian_scalar(1.0).unwrap();
    let s = BeliefState::isotropic(Structure::FC, DVector::zeros(3), 1.0, 0).unwrap();
    let c = cfg(Algorithm::Bong, FamilyTag::FC_NAT, EstimatorKind::LinHess);
    let (out, trace) = run_stream(s.clone(), &Dynamics::Static, &[], &spec, &model, &c, 0, 1, |t, _, _| Ok(t)).unwrap();
    assert_eq!(out, s);
    assert!(trace.is_empty());
}

#[test]
fn conjugate_stream_equals_batch_posterior() {
    let data = bong::harness::synth_linreg(3, 10, 0.3, 4).unwrap();
    let spec = MlpSpec::linear(3, 1).unwrap();
    let model = ObsModel::gaussian_scalar(0.09).unwrap();
    let s = BeliefState::isotropic(Structure::FC, DVector::zeros(4), 1.0, 0).unwrap();
    let c = cfg(Algorithm::Bong, FamilyTag::FC_NAT, EstimatorKind::LinHess);
    let (out, trace) =
        run_stream(s, &Dynamics::Static, &data.records, &spec, &model, &c, 0, 3, |t, _, _| Ok(t)).unwrap();
    assert_eq!(trace, vec![3, 6, 9, 10]);
    // Batch posterior: stack all ten rows into one linear-Gaussian update.
    let n = data.len();
    let mut h = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, (x, yy)) in data.records.iter().enumerate() {
        h.set_row(i, &spec.jacobian_f(&DVector::zeros(4), x).unwrap().row(0));
        y[i] = yy[0];
    }
    let (bm, bs) = exact_linear_gaussian_update(
        &DVector::zeros(4),
        &DMatrix::identity(4, 4),
        &h,
        &DVector::zeros(n),
        &(DMatrix::identity(n, n) * 0.09),
        &y,
    )
    .unwrap();
    assert_vec_close(out.mean(), &bm, 1e-9);
    assert_mat_close(&out.dense_cov().unwrap(), &bs, 1e-9);
}

#[test]
fn streams_are_deterministic_and_tag_failures() {
    let data = bong::harness::synth_nonlin(2, 20, 1).unwrap();
    let spec = MlpSpec::new(vec![2, 4, 1], bong::Activation::Tanh).unwrap();
    let model = ObsModel::gaussian_scalar(0.1).unwrap();
    let s = BeliefState::isotropic(Structure::Diag, spec.init(0), 0.3, 0).unwrap();
    let c = cfg(Algorithm::Blr, FamilyTag::DIAG_NAT, EstimatorKind::McEf).with_lr(0.2).with_iters(2);
    let run = || {
        run_stream(s.clone(), &Dynamics::Static, &data.records, &spec, &model, &c, 5, 0, |_, st, _| Ok(st.clone()))
            .unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(ta.len(), 1);

    let bad = cfg(Algorithm::Bong, FamilyTag::DIAG_MOM, EstimatorKind::LinHess);
    let tiny = BeliefState::isotropic(Structure::Diag, spec.init(0), 100.0, 0).unwrap();
    let err = run_stream(
        tiny,
        &Dynamics::Static,
        &data.records,
        &spec,
        &ObsModel::gaussian_scalar(1e-4).unwrap(),
        &bad,
        0,
        0,
        |_, _, _| Ok(()),
    )
    .unwrap_err();
    assert!(matches!(err, BongError::AtStep { step: 1, .. }), "{err}");
    assert_eq!(err.class(), "NotPositiveDefinite");
}

#[test]
fn full_rank_dlr_stream_tracks_fc_with_near_null_columns() {
    // Repeated lossless projections leave columns of size ~1e-150 in W; the
    // eigensolver used by the projection must not turn them into NaN.
    let spec = MlpSpec::new(vec![2, 3, 1], bong::Activation::Tanh).unwrap();
    let model = ObsModel::gaussian_scalar(0.1).unwrap();
    let data = bong::harness::synth_nonlin(2, 30, 5).unwrap();
    let p = spec.n_params();
    let est = EstimatorCfg::new(EstimatorKind::LinHess);
    let dlr_cfg = AlgorithmCfg::new(Algorithm::Bong, FamilyTag::DLR, est.clone()).with_rank(p);
    let fc_cfg = AlgorithmCfg::new(Algorithm::Bong, FamilyTag::FC_NAT, est);
    let run = |st: Structure, c: &AlgorithmCfg| {
        let s = BeliefState::isotropic(st, spec.init(2), 0.5, p).unwrap();
        run_stream(s, &Dynamics::Static, &data.records, &spec, &model, c, 0, 0, |_, _, _| Ok(())).unwrap().0
    };
    let dlr = run(Structure::DLR, &dlr_cfg);
    let fc = run(Structure::FC, &fc_cfg);
    assert!(rel_err_vec(dlr.mean(), fc.mean()) < 1e-8);
    assert!(rel_err(&dlr.dense_cov().unwrap(), &fc.dense_cov().unwrap()) < 1e-8);
}
