//! Experiment orchestration: configuration, data preparation, streaming run
//! with periodic evaluation, and CSV / JSON output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BongError, Result};
use crate::estimators::{EstimatorCfg, EstimatorKind};
use crate::families::{BeliefState, FamilyTag};
use crate::obs::{ObsModel, DEFAULT_OBS_JITTER_SCALE};
use crate::predictor::{Activation, MlpSpec, DEFAULT_HESSIAN_CAP};
use crate::updaters::{run_stream, step_rng, Algorithm, AlgorithmCfg, Dynamics, PsdPolicy};

use super::datasets::{synth_linreg, synth_nonlin, Dataset, TaskKind};
use super::idx::load_idx;
use super::metrics::{evaluate, EvalMetrics, MetricSet};
use super::tuning::tune_learning_rate;

/// Column header of the trace CSV.
pub const CSV_HEADER: [&str; 8] =
    ["t", "nlpd_plugin", "nlpd_mc", "nlpd_lin", "miscl_plugin", "miscl_mc", "miscl_lin", "wall_ns"];

/// Salt separating the evaluation RNG streams from the estimator streams.
const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Linear regression with `d` inputs and noise standard deviation `noise`.
    SynthLinreg { d: usize, noise: f64 },
    /// Regression on a fixed random teacher MLP with `d` inputs.
    SynthNonlin { d: usize },
    /// IDX image/label pair (MNIST layout).
    Idx { images: PathBuf, labels: PathBuf },
}

impl DatasetSpec {
    /// Parse `synth-linreg`, `synth-nonlin` or `idx:<images>,<labels>`.
    pub fn parse(text: &str, d: usize, noise: f64) -> Result<Self> {
        match text {
            "synth-linreg" => Ok(DatasetSpec::SynthLinreg { d, noise }),
            "synth-nonlin" => Ok(DatasetSpec::SynthNonlin { d }),
            other => {
                let paths = other
                    .strip_prefix("idx:")
                    .ok_or_else(|| BongError::InvalidConfig(format!("unknown dataset '{other}'")))?;
                let (img, lbl) = paths
                    .split_once(',')
                    .ok_or_else(|| BongError::InvalidConfig("idx dataset needs '<images>,<labels>'".into()))?;
                Ok(DatasetSpec::Idx { images: img.into(), labels: lbl.into() })
            }
        }
    }
}

/// Complete description of one run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// One of `fc`, `fc_mom`, `diag`, `diag_mom`, `dlr`.
    pub family: String,
    pub estimator: EstimatorKind,
    /// DLR rank R.
    pub rank: usize,
    /// Monte-Carlo samples M.
    pub samples: usize,
    /// Hutchinson probes (defaults to 10·M).
    pub probes: Option<usize>,
    pub antithetic: bool,
    /// Inner iterations I.
    pub iters: usize,
    /// Learning rate α.
    pub lr: f64,
    /// When set, α is chosen from this grid before the run.
    pub lr_grid: Option<Vec<f64>>,
    /// Score tuning trials after this many steps instead of at the end.
    pub tune_at: Option<usize>,
    pub dataset: DatasetSpec,
    /// Training-stream length T.
    pub n_train: usize,
    /// Held-out test-set size.
    pub n_test: usize,
    pub seed: u64,
    /// Seed for synthetic data; defaults to `seed`.
    pub data_seed: Option<u64>,
    /// Prior variance σ₀².
    pub sigma0: f64,
    pub eval_every: usize,
    /// Posterior samples S for the Monte-Carlo and linearized metrics.
    pub eval_samples: usize,
    pub metrics: MetricSet,
    /// Hidden-layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Regression observation variance; defaults to 0.1·Var(y_train).
    pub obs_var: Option<f64>,
    pub obs_jitter_scale: f64,
    pub hessian_cap: usize,
    pub jitter: Option<f64>,
    pub clamp_variance: bool,
    pub dynamics: Dynamics,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::Bong,
            family: "fc".into(),
            estimator: EstimatorKind::LinHess,
            rank: 10,
            samples: 10,
            probes: None,
            antithetic: false,
            iters: 1,
            lr: 1.0,
            lr_grid: None,
            tune_at: None,
            dataset: DatasetSpec::SynthLinreg { d: 10, noise: 0.1 },
            n_train: 200,
            n_test: 200,
            seed: 0,
            data_seed: None,
            sigma0: 1.0,
            eval_every: 10,
            eval_samples: 100,
            metrics: MetricSet::default(),
            hidden: Vec::new(),
            activation: Activation::Tanh,
            obs_var: None,
            obs_jitter_scale: DEFAULT_OBS_JITTER_SCALE,
            hessian_cap: DEFAULT_HESSIAN_CAP,
            jitter: None,
            clamp_variance: false,
            dynamics: Dynamics::Static,
        }
    }
}

impl RunConfig {
    /// Filter settings implied by this configuration.
    pub fn algorithm_cfg(&self) -> Result<AlgorithmCfg> {
        let family = FamilyTag::parse(&self.family)?;
        let estimator = EstimatorCfg {
            kind: self.estimator,
            samples: self.samples,
            probes: self.probes,
            antithetic: self.antithetic,
            hessian_cap: self.hessian_cap,
            obs_jitter_scale: self.obs_jitter_scale,
        };
        let cfg = AlgorithmCfg {
            algorithm: self.algorithm,
            family,
            estimator,
            lr: self.lr,
            iters: self.iters,
            rank: self.rank,
            psd: PsdPolicy { jitter: self.jitter, clamp_variance: self.clamp_variance },
        };
        cfg.resolved()
    }
}

/// Everything needed to run a stream.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: MlpSpec,
    pub model: ObsModel,
    pub train: Dataset,
    pub test: Dataset,
    pub initial: BeliefState,
    pub alg: AlgorithmCfg,
    /// Resolved regression observation variance.
    pub obs_var: Option<f64>,
}

/// Load data, build the network, the observation model and the prior.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(BongError::InvalidConfig("n-train and n-test must be at least 1".into()));
    }
    if cfg.eval_samples == 0 {
        return Err(BongError::InvalidConfig("eval-samples must be at least 1".into()));
    }
    let total = cfg.n_train + cfg.n_test;
    let data_seed = cfg.data_seed.unwrap_or(cfg.seed);
    let data = match &cfg.dataset {
        DatasetSpec::SynthLinreg { d, noise } => synth_linreg(*d, total, *noise, data_seed)?,
        DatasetSpec::SynthNonlin { d } => synth_nonlin(*d, total, data_seed)?,
        DatasetSpec::Idx { images, labels } => load_idx(images, labels, Some(total))?,
    };
    if data.len() <= cfg.n_train {
        return Err(BongError::InvalidConfig(format!(
            "dataset has {} records, need more than n-train = {}",
            data.len(),
            cfg.n_train
        )));
    }
    let (train, test) = data.split_at(cfg.n_train);
    let mut layers = vec![data.meta.d];
    layers.extend(&cfg.hidden);
    layers.push(data.meta.c);
    let spec = MlpSpec::new(layers, cfg.activation)?;
    let (model, obs_var) = match data.meta.task {
        TaskKind::Classification => (ObsModel::categorical(data.meta.c)?, None),
        TaskKind::Regression => {
            let var = cfg.obs_var.unwrap_or_else(|| 0.1 * train.y_variance());
            if !(var > 0.0) {
                return Err(BongError::InvalidConfig(format!("observation variance must be positive, got {var}")));
            }
            let r = nalgebra::DMatrix::identity(data.meta.c, data.meta.c) * var;
            (ObsModel::gaussian(r)?, Some(var))
        }
    };
    let alg = cfg.algorithm_cfg()?;
    let initial = BeliefState::isotropic(alg.family.structure, spec.init(cfg.seed), cfg.sigma0, alg.rank)?;
    Ok(Prepared { spec, model, train, test, initial, alg, obs_var })
}

/// One row of the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    /// 1-based step index.
    pub t: usize,
    pub metrics: EvalMetrics,
    /// Cumulative nanoseconds spent inside the update step up to `t`.
    pub wall_ns: u64,
}

/// Configuration as actually executed, written as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    #[serde(flatten)]
    pub config: RunConfig,
    pub data_seed_resolved: u64,
    pub layer_sizes: Vec<usize>,
    pub n_params: usize,
    pub obs_var_resolved: Option<f64>,
    pub lr_resolved: f64,
    pub iters_resolved: usize,
    /// `(α, validation NLPD)` pairs when the learning rate was tuned.
    pub tuning_scores: Option<Vec<(f64, f64)>>,
}

/// Trace plus the resolved configuration and final posterior.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub resolved: ResolvedConfig,
    pub trace: Vec<StepTrace>,
    pub final_state: BeliefState,
}

/// Tune (when a grid is given) and run a stream, evaluating on the test set
/// at the configured cadence.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    let prep = prepare(cfg)?;
    let mut alg = prep.alg.clone();
    let mut tuning_scores = None;
    if let Some(grid) = &cfg.lr_grid {
        let outcome = tune_learning_rate(
            &prep.initial,
            &prep.spec,
            &prep.model,
            &alg,
            &cfg.dynamics,
            &prep.train.records,
            grid,
            cfg.seed,
            cfg.tune_at,
        )?;
        alg.lr = outcome.best_lr;
        tuning_scores = Some(outcome.scores);
    }
    let test = &prep.test.records;
    let (final_state, trace) = run_stream(
        prep.initial.clone(),
        &cfg.dynamics,
        &prep.train.records,
        &prep.spec,
        &prep.model,
        &alg,
        cfg.seed,
        cfg.eval_every,
        |t, state, wall_ns| {
            let mut rng = step_rng(cfg.seed ^ EVAL_SALT, t, 0);
            let metrics = evaluate(state, &prep.model, &prep.spec, test, &cfg.metrics, cfg.eval_samples, &mut rng)?;
            Ok(StepTrace { t, metrics, wall_ns })
        },
    )?;
    let resolved = ResolvedConfig {
        config: cfg.clone(),
        data_seed_resolved: cfg.data_seed.unwrap_or(cfg.seed),
        layer_sizes: prep.spec.layer_sizes().to_vec(),
        n_params: prep.spec.n_params(),
        obs_var_resolved: prep.obs_var,
        lr_resolved: alg.lr,
        iters_resolved: alg.iters,
        tuning_scores,
    };
    Ok(RunOutput { resolved, trace, final_state })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the trace as CSV with the fixed column order; metrics that were not
/// computed are left empty.
pub fn write_trace_csv(path: &Path, trace: &[StepTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for row in trace {
        let m = &row.metrics;
        w.write_record([
            row.t.to_string(),
            fmt_opt(m.nlpd_plugin),
            fmt_opt(m.nlpd_mc),
            fmt_opt(m.nlpd_lin),
            fmt_opt(m.miscl_plugin),
            fmt_opt(m.miscl_mc),
            fmt_opt(m.miscl_lin),
            row.wall_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trace CSV written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<StepTrace>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(BongError::Io(format!("unexpected CSV header {header:?}")));
    }
    let parse_opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse::<f64>().map(Some).map_err(|e| BongError::Io(format!("bad number '{s}': {e}")))
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t = rec[0].parse::<usize>().map_err(|e| BongError::Io(e.to_string()))?;
        let metrics = EvalMetrics {
            nlpd_plugin: parse_opt(&rec[1])?,
            nlpd_mc: parse_opt(&rec[2])?,
            nlpd_lin: parse_opt(&rec[3])?,
            miscl_plugin: parse_opt(&rec[4])?,
            miscl_mc: parse_opt(&rec[5])?,
            miscl_lin: parse_opt(&rec[6])?,
        };
        let wall_ns = rec[7].parse::<u64>().map_err(|e| BongError::Io(e.to_string()))?;
        out.push(StepTrace { t, metrics, wall_ns });
    }
    Ok(out)
}

/// Path of the JSON sidecar for a trace written to `out`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".json");
    if out.extension().is_some_and(|e| e == "json") {
        let mut n = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
        n.push(".config.json");
        return out.with_file_name(n);
    }
    out.with_file_name(name)
}

/// Write the CSV trace to `out` and the resolved configuration next to it.
pub fn write_outputs(out: &Path, output: &RunOutput) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_trace_csv(out, &output.trace)?;
    let json = serde_json::to_string_pretty(&output.resolved)?;
    std::fs::write(sidecar_path(out), json + "\n")?;
    Ok(())
}
