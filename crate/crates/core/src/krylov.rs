//! Conjugate gradients for symmetric positive (semi)definite operators.
//!
//! The iteration starts from `x = 0` and stops once `‖b − A·x‖ ≤ rel_tol·‖b‖`.
//! For singular but consistent systems the iterates stay in the Krylov space
//! of `(A, b)`, so no kernel component is introduced.

use rayon::prelude::*;
use thiserror::Error;

/// Minimal interface CG needs: a square operator applied out of place.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, x: &[f64], y: &mut [f64]);
}

/// Adapter turning a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    /// `None` selects `20·√dim + 1000`.
    pub max_iter: Option<usize>,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { rel_tol: 1e-9, max_iter: None, record_history: false }
    }
}

impl SolverConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        SolverConfig { rel_tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(SolverError::InvalidConfig(format!("rel_tol {} outside (0,1)", self.rel_tol)));
        }
        if self.max_iter == Some(0) {
            return Err(SolverError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_iter_for(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or_else(|| (20.0 * (dim as f64).sqrt()) as usize + 1000)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A·x‖ / ‖b‖`, recomputed explicitly at exit.
    pub rel_residual: f64,
    pub history: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("CG did not converge in {iterations} iterations (relative residual {rel_residual:e})")]
    NotConverged { iterations: usize, rel_residual: f64, last_iterate: Vec<f64> },

    #[error("CG breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: String },

    #[error("right-hand side has length {got}, operator dimension is {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

const PAR_THRESHOLD: usize = 1 << 14;

/// Chunk length of the fixed-shape parallel reductions; results do not depend
/// on the thread count or on work stealing.
const REDUCE_CHUNK: usize = 4096;

/// Deterministic parallel sum of `f(i)` over `0..n`.
pub fn det_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    if n < PAR_THRESHOLD {
        return (0..n).map(f).sum();
    }
    let partial: Vec<f64> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| (c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n)).map(&f).sum())
        .collect();
    partial.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    det_sum(a.len(), |i| a[i] * b[i])
}

/// `y += alpha·x`
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if y.len() >= PAR_THRESHOLD {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += alpha * xi);
    } else {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
    }
}

/// `p = r + beta·p`
fn xpby(r: &[f64], beta: f64, p: &mut [f64]) {
    if p.len() >= PAR_THRESHOLD {
        p.par_iter_mut().zip(r.par_iter()).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    } else {
        p.iter_mut().zip(r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
}

fn residual<A: LinearOperator + ?Sized>(op: &mut A, b: &[f64], x: &[f64], r: &mut [f64]) {
    op.apply(x, r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
}

/// Maximum number of restarts from the explicit residual after recurrence drift.
const MAX_RESTARTS: usize = 3;

pub fn cg<A: LinearOperator + ?Sized>(op: &mut A, b: &[f64], config: &SolverConfig) -> Result<SolveOutcome, SolverError> {
    config.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(SolverError::LengthMismatch { expected: n, got: b.len() });
    }
    let max_iter = config.max_iter_for(n);
    let mut history = config.record_history.then(Vec::new);

    let b_norm = dot(b, b).sqrt();
    if !b_norm.is_finite() {
        return Err(SolverError::Breakdown { iteration: 0, reason: "non-finite right-hand side".into() });
    }
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SolveOutcome { solution: x, iterations: 0, rel_residual: 0.0, history });
    }
    let target = config.rel_tol * b_norm;

    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut q = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let mut restarts = 0;
    if let Some(h) = history.as_mut() {
        h.push(1.0);
    }

    loop {
        if iterations >= max_iter {
            residual(op, b, &x, &mut r);
            let rel_residual = dot(&r, &r).sqrt() / b_norm;
            return Err(SolverError::NotConverged { iterations, rel_residual, last_iterate: x });
        }
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !pq.is_finite() {
            return Err(SolverError::Breakdown { iteration: iterations, reason: "non-finite curvature pᵀAp".into() });
        }
        if pq <= 0.0 {
            return Err(SolverError::Breakdown {
                iteration: iterations,
                reason: format!("non-positive curvature pᵀAp = {pq:e}; right-hand side inconsistent?"),
            });
        }
        let alpha = rr / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let rr_new = dot(&r, &r);
        iterations += 1;
        if !rr_new.is_finite() {
            return Err(SolverError::Breakdown { iteration: iterations, reason: "non-finite residual".into() });
        }
        if let Some(h) = history.as_mut() {
            h.push(rr_new.sqrt() / b_norm);
        }

        if rr_new.sqrt() <= target {
            residual(op, b, &x, &mut r);
            let true_rr = dot(&r, &r);
            if true_rr.sqrt() <= target || restarts >= MAX_RESTARTS {
                let rel_residual = true_rr.sqrt() / b_norm;
                if rel_residual > config.rel_tol {
                    return Err(SolverError::NotConverged { iterations, rel_residual, last_iterate: x });
                }
                return Ok(SolveOutcome { solution: x, iterations, rel_residual, history });
            }
            // recurrence drifted away from the true residual: restart from it
            restarts += 1;
            p.copy_from_slice(&r);
            rr = true_rr;
            continue;
        }
        xpby(&r, rr_new / rr, &mut p);
        rr = rr_new;
    }
}
