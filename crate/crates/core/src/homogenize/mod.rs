//! Two-sided bounds on the homogenized matrix.
//!
//! * Primal: P1 cell solutions `u⁽ʲ⁾` for `ξ = e⁽ʲ⁾` give the upper bound `A*_h`.
//! * Dual: potentials `ψ⁽ʲ⁾` with fluxes `w⁽ʲ⁾ = D_curl ψ⁽ʲ⁾` give `B*_h`, and
//!   `(B*_h)⁻¹` is a lower bound.
//! * Projected: the primal flux residual is L²-projected onto `range(D_curl)`
//!   and plugged into the dual energy, giving the lower bound `(B̃*_h)⁻¹`
//!   without any dual iterations.
//!
//! The bounds hold for any iterate, converged or not: the upper bound only needs
//! `u⁽ʲ⁾` in the P1 space and the lower bounds only need fluxes that are exact
//! curls, which `D_curl ψ` always is. Energies are integrated exactly by the
//! one-point rule because coefficients are element-wise constant.

mod fft;

pub use fft::{curl_normal_symbols, FftProjector, PINV_REL_THRESHOLD};

use nalgebra::Matrix3;

use crate::analysis::{asymmetry, symmetrize};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::krylov::{cg, det_sum, dot, SolverConfig};
use crate::operators::{rhs_dual, rhs_primal, CurlNormalOperator, DerivativeOperators, DualOperator, ElementField, PrimalOperator};

const UNIT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Largest tolerated relative asymmetry of an assembled 3×3 energy matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub u: [Vec<f64>; 3],
    pub iterations: [usize; 3],
    pub rel_residuals: [f64; 3],
    /// Upper bound `A*_h`.
    pub upper: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub psi: [Vec<f64>; 3],
    pub iterations: [usize; 3],
    pub rel_residuals: [f64; 3],
    pub b_h: Matrix3<f64>,
    /// Lower bound `(B*_h)⁻¹`.
    pub lower: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectedDual {
    /// `w_H⁽ʲ⁾ = A(e⁽ʲ⁾ + ∇u⁽ʲ⁾) − Ã*e⁽ʲ⁾`
    pub residual_flux: [ElementField; 3],
    pub psi: [Vec<f64>; 3],
    /// `w̃⁽ʲ⁾ = D_curl ψ⁽ʲ⁾`
    pub projected: [ElementField; 3],
    /// Dual energies `G_jk` at `α⁽ʲ⁾ = Ã*e⁽ʲ⁾`.
    pub g: Matrix3<f64>,
    pub b_tilde: Matrix3<f64>,
    /// Lower bound `(B̃*_h)⁻¹ = Ã* G⁻¹ Ã*`.
    pub lower: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionMethod {
    Fft,
    /// CG on the normal equations `D_curlᵀ D_curl ψ = D_curlᵀ w_H`.
    Cg(SolverConfig),
}

fn checked_symmetric(m: Matrix3<f64>, what: &str) -> Result<Matrix3<f64>> {
    let asym = asymmetry(&m);
    if asym > SYMMETRY_TOL {
        log::error!("{what} asymmetry {asym:e} exceeds {SYMMETRY_TOL:e}");
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    Ok(symmetrize(&m))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// `(1/n_ele)·Σ_e ⟨M_e(a_k + f_k(e)), a_j + f_j(e)⟩`, the cell-averaged energy
/// cross terms for element-constant `M` (quadrature weight over `|Y|` is `1/n_ele`).
fn energy_matrix<F>(n_ele: usize, matrix: F, shifts: &[[f64; 3]; 3], fields: [&[[f64; 3]]; 3]) -> Matrix3<f64>
where
    F: Fn(usize) -> crate::sym3::Sym3 + Sync,
{
    Matrix3::from_fn(|j, k| {
        det_sum(n_ele, |e| {
            let m = matrix(e);
            m.bilinear(add(shifts[j], fields[j][e]), add(shifts[k], fields[k][e]))
        }) / n_ele as f64
    })
}

/// Upper-bound matrix from arbitrary nodal vectors `u⁽ʲ⁾`.
pub fn primal_energy(ops: &DerivativeOperators, coeff: &CoefficientField, u: &[Vec<f64>; 3]) -> Result<Matrix3<f64>> {
    let grads = [ops.grad(&u[0])?, ops.grad(&u[1])?, ops.grad(&u[2])?];
    let m = energy_matrix(ops.n_ele(), |e| *coeff.get(e), &UNIT, [&grads[0], &grads[1], &grads[2]]);
    checked_symmetric(m, "A*_h")
}

/// Dual energy matrix `(1/|Y|)∫⟨A⁻¹(α_k + w_k), α_j + w_j⟩` for given fluxes.
pub fn dual_energy(coeff: &CoefficientField, alphas: &[[f64; 3]; 3], fluxes: [&[[f64; 3]]; 3]) -> Result<Matrix3<f64>> {
    let m = energy_matrix(coeff.len(), |e| *coeff.inverse(e), alphas, fluxes);
    checked_symmetric(m, "dual energy")
}

fn invert(m: &Matrix3<f64>, what: &str) -> Result<Matrix3<f64>> {
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput(format!("{what} is singular")))?;
    Ok(symmetrize(&inv))
}

/// Relative size below which a right-hand side is treated as pure rounding
/// noise (it vanishes identically for constant coefficients).
pub const RHS_NOISE_REL: f64 = 1e-12;

/// `RHS_NOISE_REL` times a bound on `‖w_q·Dᵀ(M·e)‖` for `‖M‖ ≤ scale`.
fn rhs_noise_floor(ops: &DerivativeOperators, scale: f64, dim: usize) -> f64 {
    let gsum = ops
        .shape_gradient_table()
        .iter()
        .map(|g| g.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).sum::<f64>())
        .fold(0.0, f64::max);
    RHS_NOISE_REL * ops.weight() * scale * gsum * 24.0 * (dim as f64).sqrt()
}

fn solve_direction<A: crate::krylov::LinearOperator>(
    op: &mut A,
    b: &[f64],
    floor: f64,
    config: &SolverConfig,
    context: String,
) -> Result<crate::krylov::SolveOutcome> {
    if dot(b, b).sqrt() <= floor {
        log::debug!("{context}: right-hand side is rounding noise, solution is zero");
        return Ok(crate::krylov::SolveOutcome { solution: vec![0.0; b.len()], iterations: 0, rel_residual: 0.0, history: None });
    }
    cg(op, b, config).map_err(|source| Error::Solver { context, source })
}

pub fn solve_primal_all(grid: &PeriodicGrid, coeff: &CoefficientField, config: &SolverConfig) -> Result<PrimalSolution> {
    let ops = DerivativeOperators::new(grid);
    solve_primal_with(&ops, coeff, config)
}

pub fn solve_primal_with(ops: &DerivativeOperators, coeff: &CoefficientField, config: &SolverConfig) -> Result<PrimalSolution> {
    let mut op = PrimalOperator::new(ops, coeff)?;
    let floor = rhs_noise_floor(ops, coeff.lambda_max(), ops.n_vox());
    let mut u: [Vec<f64>; 3] = Default::default();
    let mut iterations = [0; 3];
    let mut rel_residuals = [0.0; 3];
    for j in 0..3 {
        let b = rhs_primal(ops, coeff, UNIT[j]);
        let out = solve_direction(&mut op, &b, floor, config, format!("primal solve, direction {}", j + 1))?;
        log::info!("primal direction {}: {} CG iterations", j + 1, out.iterations);
        iterations[j] = out.iterations;
        rel_residuals[j] = out.rel_residual;
        u[j] = out.solution;
    }
    let upper = primal_energy(ops, coeff, &u)?;
    Ok(PrimalSolution { u, iterations, rel_residuals, upper })
}

pub fn solve_dual_all(grid: &PeriodicGrid, coeff: &CoefficientField, config: &SolverConfig) -> Result<DualSolution> {
    let ops = DerivativeOperators::new(grid);
    solve_dual_with(&ops, coeff, config)
}

pub fn solve_dual_with(ops: &DerivativeOperators, coeff: &CoefficientField, config: &SolverConfig) -> Result<DualSolution> {
    let mut op = DualOperator::new(ops, coeff)?;
    let floor = rhs_noise_floor(ops, 1.0 / coeff.lambda_min(), 3 * ops.n_vox());
    let mut psi: [Vec<f64>; 3] = Default::default();
    let mut iterations = [0; 3];
    let mut rel_residuals = [0.0; 3];
    for j in 0..3 {
        let b = rhs_dual(ops, coeff, UNIT[j]);
        let out = solve_direction(&mut op, &b, floor, config, format!("dual solve, direction {}", j + 1))?;
        log::info!("dual direction {}: {} CG iterations", j + 1, out.iterations);
        iterations[j] = out.iterations;
        rel_residuals[j] = out.rel_residual;
        psi[j] = out.solution;
    }
    let w = [ops.curl(&psi[0])?, ops.curl(&psi[1])?, ops.curl(&psi[2])?];
    let b_h = dual_energy(coeff, &UNIT, [&w[0], &w[1], &w[2]])?;
    let lower = invert(&b_h, "B*_h")?;
    Ok(DualSolution { psi, iterations, rel_residuals, b_h, lower })
}

/// L²-projection of an element field onto `range(D_curl)` by CG on the normal equations.
pub fn cg_project(ops: &DerivativeOperators, field: &[[f64; 3]], config: &SolverConfig) -> Result<(Vec<f64>, ElementField)> {
    let w = ops.weight();
    let weighted: ElementField = field.iter().map(|f| f.map(|x| x * w)).collect();
    let mut rhs = ops.curl_t(&weighted)?;
    crate::operators::remove_channel_means(&mut rhs, 3);
    let mut op = CurlNormalOperator::new(ops);
    let out = cg(&mut op, &rhs, config)
        .map_err(|source| Error::Solver { context: "projection normal equations".into(), source })?;
    let projected = ops.curl(&out.solution)?;
    Ok((out.solution, projected))
}

/// FFT-based L² projection of `field` onto `range(D_curl)`; returns `(ψ, w̃)`.
pub fn fft_project(grid: &PeriodicGrid, field: &[[f64; 3]]) -> Result<(Vec<f64>, ElementField)> {
    let ops = DerivativeOperators::new(grid);
    FftProjector::new(&ops).project(field)
}

/// Projected lower bound from a primal solution, with `Ã* = A*_h`.
pub fn algorithm2(grid: &PeriodicGrid, coeff: &CoefficientField, primal: &PrimalSolution, method: ProjectionMethod) -> Result<ProjectedDual> {
    let ops = DerivativeOperators::new(grid);
    algorithm2_with(&ops, coeff, primal, method)
}

pub fn algorithm2_with(
    ops: &DerivativeOperators,
    coeff: &CoefficientField,
    primal: &PrimalSolution,
    method: ProjectionMethod,
) -> Result<ProjectedDual> {
    let approx = symmetrize(&primal.upper);
    let alphas: [[f64; 3]; 3] = std::array::from_fn(|j| {
        let c = approx.column(j);
        [c[0], c[1], c[2]]
    });
    let projector = match method {
        ProjectionMethod::Fft => Some(FftProjector::new(ops)),
        ProjectionMethod::Cg(_) => None,
    };

    let mut residual_flux: [ElementField; 3] = Default::default();
    let mut psi: [Vec<f64>; 3] = Default::default();
    let mut projected: [ElementField; 3] = Default::default();
    for j in 0..3 {
        let grad = ops.grad(&primal.u[j])?;
        let flux: ElementField = (0..ops.n_ele())
            .map(|e| {
                let s = coeff.get(e).mul_vec(add(UNIT[j], grad[e]));
                [s[0] - alphas[j][0], s[1] - alphas[j][1], s[2] - alphas[j][2]]
            })
            .collect();
        let (p, w) = match (&projector, method) {
            (Some(proj), _) => proj.project(&flux)?,
            (None, ProjectionMethod::Cg(cfg)) => cg_project(ops, &flux, &cfg)?,
            (None, ProjectionMethod::Fft) => unreachable!("projector built for FFT"),
        };
        residual_flux[j] = flux;
        psi[j] = p;
        projected[j] = w;
    }
    let g = dual_energy(coeff, &alphas, [&projected[0], &projected[1], &projected[2]])?;
    let approx_inv = invert(&approx, "Ã*")?;
    let b_tilde = symmetrize(&(approx_inv * g * approx_inv));
    let lower = symmetrize(&(approx * invert(&g, "G")? * approx));
    Ok(ProjectedDual { residual_flux, psi, projected, g, b_tilde, lower })
}
