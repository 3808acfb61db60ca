//! In-memory datasets and synthetic generators.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{BongError, Result};
use crate::predictor::{Activation, MlpSpec};

/// Kind of supervised task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Input dimension D.
    pub d: usize,
    /// Output dimension C.
    pub c: usize,
    pub task: TaskKind,
}

/// A sequence of `(x, y)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<(DVector<f64>, DVector<f64>)>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Validated constructor: consistent shapes, one-hot labels for
    /// classification.
    pub fn new(records: Vec<(DVector<f64>, DVector<f64>)>, meta: DatasetMeta) -> Result<Self> {
        for (i, (x, y)) in records.iter().enumerate() {
            if x.len() != meta.d || y.len() != meta.c {
                return Err(BongError::ShapeError(format!(
                    "record {i} has shapes ({}, {}), expected ({}, {})",
                    x.len(),
                    y.len(),
                    meta.d,
                    meta.c
                )));
            }
            if meta.task == TaskKind::Classification && !(y.iter().all(|v| *v == 0.0 || *v == 1.0) && y.sum() == 1.0) {
                return Err(BongError::ShapeError(format!("record {i} label is not one-hot")));
            }
        }
        Ok(Dataset { records, meta })
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// True when there are no records.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Split into the first `n` records and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head = Dataset { records: self.records[..n].to_vec(), meta: self.meta.clone() };
        let tail = Dataset { records: self.records[n..].to_vec(), meta: self.meta.clone() };
        (head, tail)
    }

    /// Mean over records of the per-coordinate variance of `y` (population
    /// variance).
    pub fn y_variance(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let n = self.len() as f64;
        let c = self.meta.c;
        let mut total = 0.0;
        for k in 0..c {
            let mean = self.records.iter().map(|(_, y)| y[k]).sum::<f64>() / n;
            total += self.records.iter().map(|(_, y)| (y[k] - mean).powi(2)).sum::<f64>() / n;
        }
        total / c as f64
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Linear regression with given weights: `x ~ N(0, I)`, `y = wᵀx + noise·ε`.
pub fn synth_linreg_with_weights(w: &DVector<f64>, t: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if t == 0 {
        return Err(BongError::InvalidConfig("dataset size must be at least 1".into()));
    }
    let d = w.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let records = (0..t)
        .map(|_| {
            let x = normal_vec(&mut rng, d);
            let eps: f64 = rng.sample(StandardNormal);
            let y = w.dot(&x) + noise * eps;
            (x, DVector::from_element(1, y))
        })
        .collect();
    Dataset::new(records, DatasetMeta { name: "synth-linreg".into(), d, c: 1, task: TaskKind::Regression })
}

/// Linear regression with a fixed random weight vector `w ~ N(0, I)` drawn
/// from `seed`.
pub fn synth_linreg(d: usize, t: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = normal_vec(&mut rng, d);
    synth_linreg_with_weights(&w, t, noise, seed)
}

/// Teacher network used by [`synth_nonlin`]: `D-10-1` tanh MLP.
pub fn nonlin_teacher(d: usize) -> Result<MlpSpec> {
    MlpSpec::new(vec![d, 10, 1], Activation::Tanh)
}

/// Nonlinear regression: `y = teacher(x) + 0.1·ε`, with the teacher MLP
/// initialized from `seed` and scaled so its output varies on unit scale.
pub fn synth_nonlin(d: usize, t: usize, seed: u64) -> Result<Dataset> {
    if t == 0 {
        return Err(BongError::InvalidConfig("dataset size must be at least 1".into()));
    }
    let teacher = nonlin_teacher(d)?;
    let theta = teacher.init(seed.wrapping_add(0x5eed)) * 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut records = Vec::with_capacity(t);
    for _ in 0..t {
        let x = normal_vec(&mut rng, d);
        let f = teacher.forward(&theta, &x)?[0];
        let eps: f64 = rng.sample(StandardNormal);
        records.push((x, DVector::from_element(1, f + 0.1 * eps)));
    }
    Dataset::new(records, DatasetMeta { name: "synth-nonlin".into(), d, c: 1, task: TaskKind::Regression })
}
