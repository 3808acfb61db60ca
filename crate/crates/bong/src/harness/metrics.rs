//! Test-set metrics: negative log predictive density (plug-in, Monte-Carlo
//! and linearized predictives) and misclassification rate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BongError, Result};
use crate::families::{sample, BeliefState};
use crate::linalg::cholesky;
use crate::obs::{logsumexp, softmax, ObsModel};
use crate::predictor::MlpSpec;

/// Labelled examples.
pub type Records = [(DVector<f64>, DVector<f64>)];

/// Which predictive distribution to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictiveMode {
    /// Point mass at the posterior mean.
    Plugin,
    /// Average over posterior samples.
    MonteCarlo,
    /// Network linearized at the posterior mean.
    Linearized,
}

/// Which metric families to compute at each evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub plugin: bool,
    pub mc: bool,
    pub lin: bool,
}

impl Default for MetricSet {
    fn default() -> Self {
        MetricSet { plugin: true, mc: true, lin: true }
    }
}

impl MetricSet {
    /// Parse a comma-separated list of `plugin`, `mc`, `lin`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut set = MetricSet { plugin: false, mc: false, lin: false };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "plugin" => set.plugin = true,
                "mc" => set.mc = true,
                "lin" => set.lin = true,
                other => return Err(BongError::InvalidConfig(format!("unknown metric '{other}'"))),
            }
        }
        Ok(set)
    }
}

/// Metrics recorded at one evaluation point. `None` marks a metric that was
/// not requested or does not apply to the task.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    pub nlpd_plugin: Option<f64>,
    pub nlpd_mc: Option<f64>,
    pub nlpd_lin: Option<f64>,
    pub miscl_plugin: Option<f64>,
    pub miscl_mc: Option<f64>,
    pub miscl_lin: Option<f64>,
}

fn non_empty(test: &Records) -> Result<()> {
    if test.is_empty() {
        Err(BongError::InvalidConfig("test set is empty".into()))
    } else {
        Ok(())
    }
}

fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Per-example predictive scores: log predictive density and (for
/// classification) the predicted class.
struct Scores {
    log_pred: Vec<f64>,
    class: Vec<Option<usize>>,
}

impl Scores {
    fn nlpd(&self) -> f64 {
        -self.log_pred.iter().sum::<f64>() / self.log_pred.len() as f64
    }

    fn miscl(&self, test: &Records) -> f64 {
        let wrong = self.class.iter().zip(test).filter(|(c, (_, y))| c.is_some_and(|k| y[k] != 1.0)).count();
        wrong as f64 / test.len() as f64
    }
}

fn plugin_scores(state: &BeliefState, model: &ObsModel, spec: &MlpSpec, test: &Records) -> Result<Scores> {
    let mu = state.mean();
    let mut log_pred = Vec::with_capacity(test.len());
    let mut class = Vec::with_capacity(test.len());
    for (x, y) in test {
        let f = spec.forward(mu, x)?;
        log_pred.push(model.loglik(y, &f));
        class.push(model.is_classification().then(|| argmax(&f)));
    }
    Ok(Scores { log_pred, class })
}

fn mc_scores<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &ObsModel,
    spec: &MlpSpec,
    test: &Records,
    s: usize,
    rng: &mut R,
) -> Result<Scores> {
    let thetas = sample(state, s, rng)?;
    let ln_s = (s as f64).ln();
    let mut log_pred = Vec::with_capacity(test.len());
    let mut class = Vec::with_capacity(test.len());
    for (x, y) in test {
        let mut lls = DVector::zeros(s);
        let mut probs = DVector::zeros(model.dim());
        for (k, th) in thetas.iter().enumerate() {
            let f = spec.forward(th, x)?;
            lls[k] = model.loglik(y, &f);
            if model.is_classification() {
                probs += softmax(&f);
            }
        }
        log_pred.push(logsumexp(&lls) - ln_s);
        class.push(model.is_classification().then(|| argmax(&probs)));
    }
    Ok(Scores { log_pred, class })
}

fn lin_scores<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &ObsModel,
    spec: &MlpSpec,
    test: &Records,
    s: usize,
    rng: &mut R,
) -> Result<Scores> {
    if s == 0 {
        return Err(BongError::InvalidConfig("sample count must be at least 1".into()));
    }
    let mu = state.mean();
    let mut log_pred = Vec::with_capacity(test.len());
    let mut class = Vec::with_capacity(test.len());
    for (x, y) in test {
        let f = spec.forward(mu, x)?;
        let jac = spec.jacobian_f(mu, x)?;
        let fsf = state.cov_sandwich(&jac)?;
        match model {
            ObsModel::Gaussian { r, .. } => {
                let pred = ObsModel::gaussian(r + fsf)?;
                log_pred.push(pred.loglik(y, &f));
                class.push(None);
            }
            ObsModel::Categorical { .. } => {
                let c = f.len();
                let l = lower_factor(&fsf);
                let mut probs = DVector::zeros(c);
                for _ in 0..s {
                    let eps = DVector::from_iterator(c, (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    probs += softmax(&(&f + &l * eps));
                }
                probs /= s as f64;
                let k = argmax(y);
                log_pred.push(probs[k].max(f64::MIN_POSITIVE).ln());
                class.push(Some(argmax(&probs)));
            }
        }
    }
    Ok(Scores { log_pred, class })
}

/// Lower factor `L` with `L Lᵀ ≈ M` for a PSD matrix, falling back to a
/// clipped eigendecomposition when Cholesky fails on a singular input.
fn lower_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cholesky(m) {
        return ch.l();
    }
    let eig = m.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Plug-in NLPD: `−mean log p(y | f(x, μ))`.
pub fn nlpd_plugin(state: &BeliefState, model: &ObsModel, spec: &MlpSpec, test: &Records) -> Result<f64> {
    non_empty(test)?;
    Ok(plugin_scores(state, model, spec, test)?.nlpd())
}

/// Monte-Carlo NLPD with `s` posterior samples shared across the test set.
pub fn nlpd_mc<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &ObsModel,
    spec: &MlpSpec,
    test: &Records,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    non_empty(test)?;
    Ok(mc_scores(state, model, spec, test, s, rng)?.nlpd())
}

/// Linearized NLPD: closed form `N(y | f(x,μ), R + FΣFᵀ)` for regression;
/// for classification, logits drawn from `N(f(x,μ), FΣFᵀ)` with the
/// softmax averaged over `s` draws.
pub fn nlpd_linearized<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &ObsModel,
    spec: &MlpSpec,
    test: &Records,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    non_empty(test)?;
    Ok(lin_scores(state, model, spec, test, s, rng)?.nlpd())
}

/// Misclassification rate under the chosen predictive.
pub fn misclassification<R: Rng + ?Sized>(
    state: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    test: &Records,
    mode: PredictiveMode,
    s: usize,
    rng: &mut R,
) -> Result<f64> {
    if !model.is_classification() {
        return Err(BongError::TaskMismatch("misclassification needs a categorical model".into()));
    }
    non_empty(test)?;
    let scores = match mode {
        PredictiveMode::Plugin => plugin_scores(state, model, spec, test)?,
        PredictiveMode::MonteCarlo => mc_scores(state, model, spec, test, s, rng)?,
        PredictiveMode::Linearized => lin_scores(state, model, spec, test, s, rng)?,
    };
    Ok(scores.miscl(test))
}

/// Compute the requested metrics in one pass per predictive. Misclassification
/// is filled in only for classification tasks.
pub fn evaluate<R: Rng + ?Sized>(
    state: &BeliefState,
    model: &ObsModel,
    spec: &MlpSpec,
    test: &Records,
    metrics: &MetricSet,
    s: usize,
    rng: &mut R,
) -> Result<EvalMetrics> {
    non_empty(test)?;
    let cls = model.is_classification();
    let mut out = EvalMetrics::default();
    if metrics.plugin {
        let sc = plugin_scores(state, model, spec, test)?;
        out.nlpd_plugin = Some(sc.nlpd());
        out.miscl_plugin = cls.then(|| sc.miscl(test));
    }
    if metrics.mc {
        let sc = mc_scores(state, model, spec, test, s, rng)?;
        out.nlpd_mc = Some(sc.nlpd());
        out.miscl_mc = cls.then(|| sc.miscl(test));
    }
    if metrics.lin {
        let sc = lin_scores(state, model, spec, test, s, rng)?;
        out.nlpd_lin = Some(sc.nlpd());
        out.miscl_lin = cls.then(|| sc.miscl(test));
    }
    Ok(out)
}
