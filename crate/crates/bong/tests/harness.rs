mod common;

use bong::harness::{
    dataset_from_idx_bytes, misclassification, nlpd_linearized, nlpd_mc, nlpd_plugin, read_trace_csv, run_experiment,
    sidecar_path, synth_linreg, synth_nonlin, tune_learning_rate, validation_split, write_outputs, write_trace_csv,
    DatasetSpec, EvalMetrics, MetricSet, PredictiveMode, RunConfig, StepTrace, CSV_HEADER,
};
use bong::oracles::exact_linear_gaussian_update;
use bong::{
    Algorithm, AlgorithmCfg, BeliefState, BongError, Dynamics, EstimatorCfg, EstimatorKind, FamilyTag, GaussFC,
    MlpSpec, ObsModel, Structure,
};
use common::*;
use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn point_mass(mu: DVector<f64>) -> BeliefState {
    let p = mu.len();
    BeliefState::FC(GaussFC::new(mu, DMatrix::identity(p, p) * 1e-30).unwrap())
}

#[test]
fn plugin_nlpd_of_exact_gaussian_prediction() {
    let spec = MlpSpec::linear(1, 1).unwrap();
    let model = ObsModel::gaussian_scalar(1.0).unwrap();
    let s = BeliefState::isotropic(Structure::FC, DVector::from_vec(vec![2.0, 1.0]), 1.0, 0).unwrap();
    let test = vec![(vec1(1.0), vec1(3.0)), (vec1(-1.0), vec1(-1.0))];
    assert_close(nlpd_plugin(&s, &model, &spec, &test).unwrap(), 0.5 * LN_2PI, 1e-14);
    assert!(matches!(nlpd_plugin(&s, &model, &spec, &[]), Err(BongError::InvalidConfig(_))));
}

#[test]
fn plugin_nlpd_of_uniform_classifier() {
    let spec = MlpSpec::linear(3, 10).unwrap();
    let model = ObsModel::categorical(10).unwrap();
    let s = BeliefState::isotropic(Structure::Diag, DVector::zeros(spec.n_params()), 1.0, 0).unwrap();
    let test: Vec<_> = (0..10).map(|k| (DVector::from_element(3, k as f64), one_hot(10, k))).collect();
    assert_close(nlpd_plugin(&s, &model, &spec, &test).unwrap(), 10f64.ln(), 1e-14);
}

#[test]
fn sampled_predictives_collapse_to_plugin_at_a_point_mass() {
    let mut r = rng(1);
    let spec = MlpSpec::new(vec![3, 4, 2], bong::Activation::Tanh).unwrap();
    let model = ObsModel::categorical(2).unwrap();
    let s = point_mass(spec.init(3));
    let test: Vec<_> = (0..20).map(|k| (randn_vec(&mut r, 3), one_hot(2, k % 2))).collect();
    let plug = nlpd_plugin(&s, &model, &spec, &test).unwrap();
    assert_close(nlpd_mc(&s, &model, &spec, &test, 50, &mut r).unwrap(), plug, 1e-9);
    assert_close(nlpd_linearized(&s, &model, &spec, &test, 50, &mut r).unwrap(), plug, 1e-9);
    let gm = ObsModel::gaussian_scalar(0.5).unwrap();
    let spec1 = MlpSpec::new(vec![3, 4, 1], bong::Activation::Tanh).unwrap();
    let s1 = point_mass(spec1.init(3));
    let test1: Vec<_> = (0..20).map(|_| (randn_vec(&mut r, 3), randn_vec(&mut r, 1))).collect();
    let plug = nlpd_plugin(&s1, &gm, &spec1, &test1).unwrap();
    assert_close(nlpd_linearized(&s1, &gm, &spec1, &test1, 1, &mut r).unwrap(), plug, 1e-9);
}

#[test]
fn linearized_nlpd_is_exact_for_linear_regression() {
    let mut r = rng(2);
    let spec = MlpSpec::linear(2, 1).unwrap();
    let model = ObsModel::gaussian_scalar(0.3).unwrap();
    let sigma = random_spd(&mut r, 3);
    let mu = randn_vec(&mut r, 3);
    let s = BeliefState::FC(GaussFC::new(mu.clone(), sigma.clone()).unwrap());
    let test: Vec<_> = (0..10).map(|_| (randn_vec(&mut r, 2), randn_vec(&mut r, 1))).collect();
    let mut want = 0.0;
    for (x, y) in &test {
        let h = spec.jacobian_f(&mu, x).unwrap();
        let var = 0.3 + (&h * &sigma * h.transpose())[(0, 0)];
        let m = spec.forward(&mu, x).unwrap()[0];
        want += 0.5 * (LN_2PI + var.ln() + (y[0] - m).powi(2) / var);
    }
    want /= test.len() as f64;
    assert_close(nlpd_linearized(&s, &model, &spec, &test, 1, &mut r).unwrap(), want, 1e-12);
}

#[test]
fn misclassification_contracts() {
    let mut r = rng(3);
    let spec = MlpSpec::linear(2, 1).unwrap();
    let s = BeliefState::isotropic(Structure::Diag, DVector::zeros(3), 1.0, 0).unwrap();
    let reg = ObsModel::gaussian_scalar(1.0).unwrap();
    assert!(matches!(
        misclassification(&s, &spec, &reg, &[(vec1(0.0), vec1(0.0))], PredictiveMode::Plugin, 1, &mut r),
        Err(BongError::TaskMismatch(_))
    ));

    let spec = MlpSpec::linear(2, 3).unwrap();
    let model = ObsModel::categorical(3).unwrap();
    let mu = randn_vec(&mut r, spec.n_params());
    let test: Vec<_> = (0..50).map(|k| (randn_vec(&mut r, 2), one_hot(3, k % 3))).collect();
    let narrow = BeliefState::isotropic(Structure::Diag, mu.clone(), 1e-6, 0).unwrap();
    let wide = BeliefState::isotropic(Structure::Diag, mu, 100.0, 0).unwrap();
    let a = misclassification(&narrow, &spec, &model, &test, PredictiveMode::Plugin, 1, &mut r).unwrap();
    let b = misclassification(&wide, &spec, &model, &test, PredictiveMode::Plugin, 1, &mut r).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a));
}

type Records = Vec<(DVector<f64>, DVector<f64>)>;

fn tuning_problem() -> (BeliefState, MlpSpec, ObsModel, Records) {
    let data = synth_linreg(2, 50, 0.1, 7).unwrap();
    let spec = MlpSpec::linear(2, 1).unwrap();
    let model = ObsModel::gaussian_scalar(0.01).unwrap();
    let s = BeliefState::isotropic(Structure::FC, DVector::zeros(3), 1.0, 0).unwrap();
    (s, spec, model, data.records)
}

#[test]
fn tuning_with_one_grid_value_picks_it() {
    let (s, spec, model, train) = tuning_problem();
    let s = BeliefState::isotropic(Structure::Diag, s.mean().clone(), 1.0, 0).unwrap();
    let cfg = AlgorithmCfg::new(Algorithm::Bog, FamilyTag::DIAG_NAT, EstimatorCfg::new(EstimatorKind::LinHess));
    let out = tune_learning_rate(&s, &spec, &model, &cfg, &Dynamics::Static, &train, &[0.05], 0, None).unwrap();
    assert_eq!(out.best_lr, 0.05);
    assert_eq!(out.scores.len(), 1);
    assert!(out.scores[0].1.is_finite());
}

#[test]
fn tuning_is_skipped_for_bong() {
    let (s, spec, model, train) = tuning_problem();
    let cfg = AlgorithmCfg::new(Algorithm::Bong, FamilyTag::FC_NAT, EstimatorCfg::new(EstimatorKind::LinHess));
    let out = tune_learning_rate(&s, &spec, &model, &cfg, &Dynamics::Static, &train, &[0.1, 0.2], 0, None).unwrap();
    assert_eq!(out.best_lr, 1.0);
    assert!(out.scores.is_empty());
}

#[test]
fn tuning_reports_when_every_trial_fails() {
    let (s, spec, model, train) = tuning_problem();
    let s = BeliefState::isotropic(Structure::Diag, s.mean().clone(), 100.0, 0).unwrap();
    let cfg = AlgorithmCfg::new(Algorithm::Bog, FamilyTag::DIAG_MOM, EstimatorCfg::new(EstimatorKind::LinHess));
    let err = tune_learning_rate(&s, &spec, &model, &cfg, &Dynamics::Static, &train, &[50.0, 100.0], 0, None);
    assert!(matches!(err, Err(BongError::AllTrialsFailed)), "{err:?}");
    assert!(tune_learning_rate(&s, &spec, &model, &cfg, &Dynamics::Static, &train, &[], 0, None).is_err());
}

#[test]
fn validation_split_takes_last_fifth() {
    let (_, _, _, train) = tuning_problem();
    let (fit, val) = validation_split(&train).unwrap();
    assert_eq!((fit.len(), val.len()), (40, 10));
    assert_eq!(val[0], train[40]);
    assert!(validation_split(&train[..4]).is_err());
}

fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 4, 0, 0, 0, 4];
    img.extend((0..32u8).map(|i| i * 8));
    let lbl = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    (img, lbl)
}

#[test]
fn idx_fixture_parses() {
    let (img, lbl) = idx_fixture();
    let ds = dataset_from_idx_bytes(&img, &lbl, None).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!((ds.meta.d, ds.meta.c), (16, 10));
    assert_eq!(ds.records[0].0[1], 8.0 / 255.0);
    assert_eq!(ds.records[1].0[0], 128.0 / 255.0);
    assert_eq!(ds.records[0].1, one_hot(10, 7));
    assert_eq!(ds.records[1].1, one_hot(10, 3));
    assert_eq!(dataset_from_idx_bytes(&img, &lbl, Some(1)).unwrap().len(), 1);
    assert_eq!(dataset_from_idx_bytes(&img, &lbl, Some(100)).unwrap().len(), 2);
}

#[test]
fn idx_errors() {
    let (img, lbl) = idx_fixture();
    let mut bad = img.clone();
    bad[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
    assert!(matches!(dataset_from_idx_bytes(&bad, &lbl, None), Err(BongError::BadMagic(0xDEAD_BEEF))));
    assert!(matches!(dataset_from_idx_bytes(&img[..40], &lbl, None), Err(BongError::TruncatedFile(_))));
    assert!(matches!(dataset_from_idx_bytes(&img[..6], &lbl, None), Err(BongError::TruncatedFile(_))));
    let mut three = lbl.clone();
    three[7] = 3;
    three.push(1);
    assert!(matches!(
        dataset_from_idx_bytes(&img, &three, None),
        Err(BongError::CountMismatch { images: 2, labels: 3 })
    ));
    let mut out_of_range = lbl;
    out_of_range[9] = 12;
    assert!(matches!(dataset_from_idx_bytes(&img, &out_of_range, None), Err(BongError::ShapeError(_))));
}

#[test]
fn synthetic_data_is_deterministic() {
    assert_eq!(synth_linreg(3, 20, 0.1, 5).unwrap(), synth_linreg(3, 20, 0.1, 5).unwrap());
    assert_ne!(synth_linreg(3, 20, 0.1, 5).unwrap(), synth_linreg(3, 20, 0.1, 6).unwrap());
    assert_eq!(synth_nonlin(2, 20, 5).unwrap(), synth_nonlin(2, 20, 5).unwrap());
    let one = synth_linreg(1, 5, 0.0, 1).unwrap();
    assert_eq!((one.meta.d, one.meta.c, one.len()), (1, 1, 5));
}

#[test]
fn trace_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let trace = vec![
        StepTrace {
            t: 1,
            metrics: EvalMetrics {
                nlpd_plugin: Some(0.1),
                nlpd_mc: None,
                nlpd_lin: Some(1e-300),
                ..Default::default()
            },
            wall_ns: 12,
        },
        StepTrace {
            t: 2,
            metrics: EvalMetrics { miscl_plugin: Some(0.25), nlpd_plugin: Some(-3.0e5 / 7.0), ..Default::default() },
            wall_ns: 40,
        },
    ];
    write_trace_csv(&path, &trace).unwrap();
    assert_eq!(read_trace_csv(&path).unwrap(), trace);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
}

fn small_config() -> RunConfig {
    RunConfig {
        dataset: DatasetSpec::SynthLinreg { d: 3, noise: 0.2 },
        n_train: 30,
        n_test: 20,
        eval_every: 7,
        eval_samples: 10,
        seed: 3,
        ..RunConfig::default()
    }
}

#[test]
fn experiment_writes_one_row_per_evaluation() {
    let out = run_experiment(&small_config()).unwrap();
    let ts: Vec<_> = out.trace.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![7, 14, 21, 28, 30]);
    assert!(out.trace.windows(2).all(|w| w[0].wall_ns <= w[1].wall_ns));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/run.csv");
    write_outputs(&path, &out).unwrap();
    assert_eq!(read_trace_csv(&path).unwrap().len(), 5);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(json["n_params"], 4);
    assert_eq!(json["algorithm"], "bong");
}

#[test]
fn experiment_is_deterministic_apart_from_timing() {
    let cfg =
        RunConfig { algorithm: Algorithm::Blr, estimator: EstimatorKind::McEf, lr: 0.3, iters: 2, ..small_config() };
    let strip = |v: Vec<StepTrace>| v.into_iter().map(|r| (r.t, r.metrics)).collect::<Vec<_>>();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(strip(a.trace), strip(b.trace));
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn experiment_final_nlpd_matches_exact_posterior() {
    let cfg =
        RunConfig { metrics: MetricSet { plugin: true, mc: false, lin: true }, obs_var: Some(0.04), ..small_config() };
    let out = run_experiment(&cfg).unwrap();
    let data = synth_linreg(3, 50, 0.2, 3).unwrap();
    let (train, test) = data.records.split_at(30);
    let spec = MlpSpec::linear(3, 1).unwrap();
    let n = train.len();
    let mut h = DMatrix::zeros(n, 4);
    let mut y = DVector::zeros(n);
    for (i, (x, yy)) in train.iter().enumerate() {
        h.set_row(i, &spec.jacobian_f(&DVector::zeros(4), x).unwrap().row(0));
        y[i] = yy[0];
    }
    let (m, s) = exact_linear_gaussian_update(
        &spec.init(3),
        &DMatrix::identity(4, 4),
        &h,
        &DVector::zeros(n),
        &(DMatrix::identity(n, n) * 0.04),
        &y,
    )
    .unwrap();
    let exact = BeliefState::FC(GaussFC::new(m, s).unwrap());
    let model = ObsModel::gaussian_scalar(0.04).unwrap();
    let last = out.trace.last().unwrap().metrics;
    assert_close(last.nlpd_plugin.unwrap(), nlpd_plugin(&exact, &model, &spec, test).unwrap(), 1e-6);
    let lin = nlpd_linearized(&exact, &model, &spec, test, 1, &mut rng(0)).unwrap();
    assert_close(last.nlpd_lin.unwrap(), lin, 1e-6);
}

#[test]
fn sidecar_sits_next_to_the_trace() {
    assert_eq!(sidecar_path(std::path::Path::new("a/b/run.csv")), std::path::PathBuf::from("a/b/run.json"));
    assert_eq!(sidecar_path(std::path::Path::new("run")), std::path::PathBuf::from("run.json"));
    assert_eq!(sidecar_path(std::path::Path::new("x.json")), std::path::PathBuf::from("x.config.json"));
}

#[test]
fn bad_configurations_are_rejected() {
    assert!(matches!(run_experiment(&RunConfig { n_test: 0, ..small_config() }), Err(BongError::InvalidConfig(_))));
    assert!(run_experiment(&RunConfig { family: "banded".into(), ..small_config() }).is_err());
    let missing = DatasetSpec::parse("idx:/nonexistent/a,/nonexistent/b", 0, 0.0).unwrap();
    assert!(matches!(run_experiment(&RunConfig { dataset: missing, ..small_config() }), Err(BongError::Io(_))));
    assert!(DatasetSpec::parse("mnist", 0, 0.0).is_err());
}
