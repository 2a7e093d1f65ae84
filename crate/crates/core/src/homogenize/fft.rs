//! L² projection onto `range(D_curl)` by FFT diagonalization.
//!
//! The normal operator `D_curlᵀ D_curl` commutes with periodic voxel shifts, so
//! a 3D DFT of the three potential channels splits it into one 3×3 Hermitian
//! block per frequency. Each block is inverted through the pseudo-inverse of
//! its 6×6 real embedding `[[Re, −Im], [Im, Re]]`; eigenvalues at or below
//! `PINV_REL_THRESHOLD · (largest block eigenvalue)` are dropped, which removes
//! the gauge kernel of the potentials (including the zero frequency).

use std::sync::Arc;

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::operators::{DerivativeOperators, ElementField};

pub const PINV_REL_THRESHOLD: f64 = 1e-12;

pub struct FftProjector {
    ops: DerivativeOperators,
    /// Row-major 6×6 pseudo-inverse of the embedded block, one per frequency.
    pinv: Vec<[f64; 36]>,
    plans: [Arc<dyn Fft<f64>>; 3],
    inverse_plans: [Arc<dyn Fft<f64>>; 3],
    dropped: usize,
}

fn embed(block: &[[Complex64; 3]; 3]) -> Matrix6<f64> {
    Matrix6::from_fn(|i, j| {
        let z = block[i % 3][j % 3];
        match (i < 3, j < 3) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

impl FftProjector {
    pub fn new(ops: &DerivativeOperators) -> Self {
        let grid = *ops.grid();
        let n = grid.n();
        let symbols = curl_normal_symbols(ops);
        let decomposed: Vec<SymmetricEigen<f64, nalgebra::U6>> =
            symbols.par_iter().map(|b| SymmetricEigen::new(embed(b))).collect();
        let max_eig = decomposed
            .iter()
            .flat_map(|d| d.eigenvalues.iter().copied())
            .fold(0.0, f64::max);
        let threshold = PINV_REL_THRESHOLD * max_eig;
        let pinv_dropped: Vec<([f64; 36], usize)> = decomposed
            .par_iter()
            .map(|d| {
                let mut p = Matrix6::zeros();
                let mut dropped = 0;
                for (k, &lambda) in d.eigenvalues.iter().enumerate() {
                    if lambda > threshold {
                        let v: Vector6<f64> = d.eigenvectors.column(k).into_owned();
                        p += v * v.transpose() / lambda;
                    } else {
                        dropped += 1;
                    }
                }
                (std::array::from_fn(|idx| p[(idx / 6, idx % 6)]), dropped)
            })
            .collect();
        let dropped = pinv_dropped.iter().map(|(_, d)| d / 2).sum();
        let pinv = pinv_dropped.into_iter().map(|(p, _)| p).collect();
        let mut planner = FftPlanner::new();
        let plans = n.map(|len| planner.plan_fft_forward(len));
        let inverse_plans = n.map(|len| planner.plan_fft_inverse(len));
        FftProjector { ops: ops.clone(), pinv, plans, inverse_plans, dropped }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.ops.grid()
    }

    /// Number of (complex) eigen-directions treated as kernel over all frequencies.
    pub fn dropped_modes(&self) -> usize {
        self.dropped
    }

    /// Projects an element field onto `range(D_curl)`; returns `(ψ, D_curl ψ)`.
    pub fn project(&self, field: &[[f64; 3]]) -> Result<(Vec<f64>, ElementField)> {
        let nv = self.ops.n_vox();
        if field.len() != self.ops.n_ele() {
            return Err(Error::LengthMismatch { expected: self.ops.n_ele(), got: field.len() });
        }
        let w = self.ops.weight();
        let weighted: ElementField = field.iter().map(|f| f.map(|x| x * w)).collect();
        let rhs = self.ops.curl_t(&weighted)?;

        let mut spectra: Vec<Vec<Complex64>> = rhs
            .chunks(nv)
            .map(|c| c.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        for s in spectra.iter_mut() {
            fft3(s, self.grid().n(), &self.plans);
        }
        let solved: Vec<[Complex64; 3]> = (0..nv)
            .into_par_iter()
            .map(|k| {
                let g = [spectra[0][k], spectra[1][k], spectra[2][k]];
                let x = [g[0].re, g[1].re, g[2].re, g[0].im, g[1].im, g[2].im];
                let p = &self.pinv[k];
                let y: [f64; 6] = std::array::from_fn(|i| (0..6).map(|j| p[6 * i + j] * x[j]).sum());
                std::array::from_fn(|c| Complex64::new(y[c], y[c + 3]))
            })
            .collect();
        let scale = 1.0 / nv as f64;
        let mut psi = vec![0.0; 3 * nv];
        for (c, out) in psi.chunks_mut(nv).enumerate() {
            let mut s: Vec<Complex64> = solved.iter().map(|v| v[c]).collect();
            fft3(&mut s, self.grid().n(), &self.inverse_plans);
            for (o, z) in out.iter_mut().zip(&s) {
                *o = z.re * scale;
            }
        }
        let projected = self.ops.curl(&psi)?;
        Ok((psi, projected))
    }
}

/// Fourier symbols of `w_q·D_curlᵀ D_curl`, one Hermitian 3×3 block per frequency
/// in x-fastest order. Convention: `û(k) = Σ_n u(n)·exp(−2πi k·n/N)`.
pub fn curl_normal_symbols(ops: &DerivativeOperators) -> Vec<[[Complex64; 3]; 3]> {
    let grid = *ops.grid();
    let n = grid.n();
    let table = *ops.shape_gradient_table();
    let corners: [[[usize; 3]; 4]; 6] = std::array::from_fn(crate::grid::kuhn_corners);
    let w = ops.weight();
    (0..grid.n_vox())
        .into_par_iter()
        .map(|flat| {
            let k = grid.voxel_coords(flat);
            let mut block = [[Complex64::new(0.0, 0.0); 3]; 3];
            for t in 0..6 {
                // gradient symbol of tet t: Σ_i ∇φ_i · exp(+2πi k·c_i/N)
                let mut d = [Complex64::new(0.0, 0.0); 3];
                for (i, c) in corners[t].iter().enumerate() {
                    let theta: f64 = (0..3)
                        .map(|ax| 2.0 * std::f64::consts::PI * (k[ax] * c[ax]) as f64 / n[ax] as f64)
                        .sum();
                    let phase = Complex64::from_polar(1.0, theta);
                    for j in 0..3 {
                        d[j] += phase * table[t][i][j];
                    }
                }
                // curl symbol column p = curl of the gradient placed in channel p
                let cols: [[Complex64; 3]; 3] = std::array::from_fn(|p| {
                    let mut re = [[0.0; 3]; 3];
                    let mut im = [[0.0; 3]; 3];
                    re[p] = d.map(|z| z.re);
                    im[p] = d.map(|z| z.im);
                    let (cr, ci) = (ops.curl_of_gradients(&re), ops.curl_of_gradients(&im));
                    std::array::from_fn(|r| Complex64::new(cr[r], ci[r]))
                });
                for p in 0..3 {
                    for q in 0..3 {
                        let s: Complex64 = (0..3).map(|r| cols[p][r].conj() * cols[q][r]).sum();
                        block[p][q] += s * w;
                    }
                }
            }
            block
        })
        .collect()
}

/// In-place 3D DFT of an x-fastest array, one axis at a time.
fn fft3(data: &mut [Complex64], n: [usize; 3], plans: &[Arc<dyn Fft<f64>>; 3]) {
    let strides = [1, n[0], n[0] * n[1]];
    for axis in 0..3 {
        let len = n[axis];
        if len == 1 {
            continue;
        }
        let lines = data.len() / len;
        let stride = strides[axis];
        // line l ↔ (outer, inner) with inner < stride
        let start = |l: usize| (l / stride) * stride * len + l % stride;
        let mut buf: Vec<Complex64> = Vec::with_capacity(data.len());
        for l in 0..lines {
            let s = start(l);
            buf.extend((0..len).map(|m| data[s + m * stride]));
        }
        let plan = &plans[axis];
        buf.par_chunks_mut(len).for_each(|line| plan.process(line));
        for l in 0..lines {
            let s = start(l);
            for m in 0..len {
                data[s + m * stride] = buf[l * len + m];
            }
        }
    }
}
