//! Helpers shared by the integration test suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn randn_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Well-conditioned random SPD matrix `A Aᵀ / n + I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = randn_mat(rng, n, n);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n)
}

/// Positive vector with entries in `[lo, lo + width)`.
pub fn positive_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, width: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| lo + width * rng.random::<f64>()))
}

pub fn one_hot(c: usize, k: usize) -> DVector<f64> {
    DVector::from_fn(c, |i, _| if i == k { 1.0 } else { 0.0 })
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Largest absolute difference relative to `1 + max |reference|`.
pub fn rel_err(actual: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    max_abs(&(actual - reference)) / (1.0 + max_abs(reference))
}

pub fn rel_err_vec(actual: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    max_abs_vec(&(actual - reference)) / (1.0 + max_abs_vec(reference))
}

pub fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} differ by {} > {tol}", (a - b).abs());
}

pub fn assert_mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let e = max_abs(&(a - b));
    assert!(e <= tol, "matrices differ by {e:e} > {tol:e}\n{a}\n{b}");
}

pub fn assert_vec_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) {
    assert_eq!(a.len(), b.len());
    let e = max_abs_vec(&(a - b));
    assert!(e <= tol, "vectors differ by {e:e} > {tol:e}\n{a}\n{b}");
}

pub fn vec1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}
