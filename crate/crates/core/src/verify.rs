//! Structural invariant suite behind `homogbound verify`.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::Result;
use crate::grid::PeriodicGrid;
use crate::homogenize::{algorithm2_with, cg_project, solve_dual_with, solve_primal_with, FftProjector, ProjectionMethod};
use crate::krylov::{LinearOperator, SolverConfig};
use crate::operators::{to_blocked, DerivativeOperators, DualOperator, ElementField, PrimalOperator};
use crate::sym3::Sym3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantCheck {
    fn new(name: &str, violation: f64, tolerance: f64) -> Self {
        InvariantCheck { name: name.into(), violation, tolerance, passed: violation <= tolerance }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub n: [usize; 3],
    pub cell: [f64; 3],
    pub seed: u64,
    /// Test hook: flip the sign of one `D_curl` block.
    pub curl_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { n: [6; 3], cell: [2.0 * std::f64::consts::PI; 3], seed: 7, curl_fault: false }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> ElementField {
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

fn norm(ops: &DerivativeOperators, f: &[[f64; 3]]) -> f64 {
    ops.inner(f, f).sqrt()
}

fn rel_diff(ops: &DerivativeOperators, a: &[[f64; 3]], b: &[[f64; 3]], scale: f64) -> f64 {
    let d: ElementField = a.iter().zip(b).map(|(x, y)| [x[0] - y[0], x[1] - y[1], x[2] - y[2]]).collect();
    norm(ops, &d) / scale.max(f64::MIN_POSITIVE)
}

fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / s.max(f64::MIN_POSITIVE)
}

fn max_entry(m: &Matrix3<f64>) -> f64 {
    m.abs().max()
}

fn dense_oracle(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let grid = PeriodicGrid::new([2; 3], [1.0, 1.3, 0.8])?;
    let mut ops = DerivativeOperators::new(&grid);
    if fault {
        ops = ops.with_curl_fault();
    }
    let values = (0..grid.n_ele())
        .map(|_| {
            let b = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            Sym3::from_matrix3(&(b * b.transpose() + Matrix3::identity() * 0.5))
        })
        .collect();
    let coeff = CoefficientField::from_elements(&grid, values)?;
    let (ne, w) = (grid.n_ele(), ops.weight());
    let block = |inv: bool| {
        let mut m = DMatrix::zeros(3 * ne, 3 * ne);
        for e in 0..ne {
            let a = if inv { coeff.inverse(e) } else { coeff.get(e) }.rows();
            for (r, row) in a.iter().enumerate() {
                for (c, x) in row.iter().enumerate() {
                    m[(r * ne + e, c * ne + e)] = *x;
                }
            }
        }
        m
    };
    let (g, c) = (ops.dense_grad(), ops.dense_curl());
    let k = g.transpose() * block(false) * &g * w;
    let kd = c.transpose() * block(true) * &c * w;

    let mut worst: f64 = 0.0;
    let u = random_vec(rng, grid.n_vox());
    let psi = random_vec(rng, 3 * grid.n_vox());
    let gu = to_blocked(&ops.grad(&u)?);
    worst = worst.max(rel_vec(&gu, (&g * DVector::from_column_slice(&u)).as_slice()));
    let cp = to_blocked(&ops.curl(&psi)?);
    worst = worst.max(rel_vec(&cp, (&c * DVector::from_column_slice(&psi)).as_slice()));

    let mut y = vec![0.0; grid.n_vox()];
    PrimalOperator::new(&ops, &coeff)?.apply(&u, &mut y);
    worst = worst.max(rel_vec(&y, (&k * DVector::from_column_slice(&u)).as_slice()));
    let mut y = vec![0.0; 3 * grid.n_vox()];
    DualOperator::new(&ops, &coeff)?.apply(&psi, &mut y);
    worst = worst.max(rel_vec(&y, (&kd * DVector::from_column_slice(&psi)).as_slice()));
    Ok(worst)
}

fn laminate_oracle(n: [usize; 3], cell: [f64; 3]) -> Result<f64> {
    // the layer interface has to sit on a grid plane
    let n = [2 * n[0].div_ceil(2), n[1], n[2]];
    let grid = PeriodicGrid::new(n, cell)?;
    let ops = DerivativeOperators::new(&grid);
    let (a, b) = (Sym3::diag([1.0, 2.0, 1.5]), Sym3::diag([4.0, 0.5, 3.0]));
    let coeff = CoefficientField::laminate(&grid, 0, a, b, 0.5)?;
    let cfg = SolverConfig::with_tol(1e-12);
    let primal = solve_primal_with(&ops, &coeff, &cfg)?;
    let dual = solve_dual_with(&ops, &coeff, &cfg)?;
    let proj = algorithm2_with(&ops, &coeff, &primal, ProjectionMethod::Fft)?;
    let exact = Matrix3::from_diagonal(&nalgebra::Vector3::new(
        2.0 / (1.0 + 1.0 / 4.0),
        (2.0 + 0.5) / 2.0,
        (1.5 + 3.0) / 2.0,
    ));
    Ok([primal.upper, dual.lower, proj.lower].iter().map(|m| max_entry(&(m - exact))).fold(0.0, f64::max))
}

fn constant_oracle(grid: &PeriodicGrid, ops: &DerivativeOperators) -> Result<f64> {
    let m = Sym3([2.0, 3.0, 4.0, 0.5, -0.3, 0.2]);
    let coeff = CoefficientField::constant(grid, m)?;
    let cfg = SolverConfig::default();
    let primal = solve_primal_with(ops, &coeff, &cfg)?;
    let dual = solve_dual_with(ops, &coeff, &cfg)?;
    let proj = algorithm2_with(ops, &coeff, &primal, ProjectionMethod::Fft)?;
    let exact = m.to_matrix3();
    Ok([primal.upper, dual.lower, proj.lower].iter().map(|x| max_entry(&(x - exact))).fold(0.0, f64::max))
}

/// Runs every invariant; errors are only returned for invalid options.
pub fn run_invariant_suite(opts: &VerifyOptions) -> Result<Vec<InvariantCheck>> {
    let grid = PeriodicGrid::new(opts.n, opts.cell)?;
    let mut ops = DerivativeOperators::new(&grid);
    if opts.curl_fault {
        ops = ops.with_curl_fault();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let failed = |name: &str, tol: f64, e: crate::Error| {
        log::error!("{name}: {e}");
        InvariantCheck::new(name, f64::INFINITY, tol)
    };

    let u = random_vec(&mut rng, grid.n_vox());
    let psi = random_vec(&mut rng, 3 * grid.n_vox());
    let gu = ops.grad(&u)?;
    let cp = ops.curl(&psi)?;
    let cosine = |g: &[[f64; 3]]| {
        let denom = norm(&ops, g) * norm(&ops, &cp);
        if denom > 0.0 { ops.inner(g, &cp).abs() / denom } else { 0.0 }
    };
    // worst-case probe: the gradient component of the curl field itself
    let w = ops.weight();
    let weighted: ElementField = cp.iter().map(|f| f.map(|x| x * w)).collect();
    let probe = ops.grad(&ops.grad_t(&weighted)?)?;
    let orth = cosine(&gu).max(cosine(&probe));
    checks.push(InvariantCheck::new("helmholtz orthogonality", orth, 1e-10));

    let scale = cp.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mean = ops.mean(&cp).iter().fold(0.0_f64, |m, x| m.max(x.abs())) / scale;
    checks.push(InvariantCheck::new("curl field mean zero", mean, 1e-12));
    let gmean = ops.mean(&gu).iter().fold(0.0_f64, |m, x| m.max(x.abs()))
        / gu.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    checks.push(InvariantCheck::new("gradient field mean zero", gmean, 1e-12));

    let projector = FftProjector::new(&ops);
    let idem = projector.project(&cp).map(|(_, w)| rel_diff(&ops, &w, &cp, norm(&ops, &cp)));
    checks.push(match idem {
        Ok(v) => InvariantCheck::new("projection idempotence", v, 1e-10),
        Err(e) => failed("projection idempotence", 1e-10, e),
    });
    let annih = projector.project(&gu).map(|(_, w)| norm(&ops, &w) / norm(&ops, &gu).max(f64::MIN_POSITIVE));
    checks.push(match annih {
        Ok(v) => InvariantCheck::new("projection annihilates gradients", v, 1e-10),
        Err(e) => failed("projection annihilates gradients", 1e-10, e),
    });

    let field = random_field(&mut rng, grid.n_ele());
    let agree = projector.project(&field).and_then(|(_, a)| {
        let (_, b) = cg_project(&ops, &field, &SolverConfig::with_tol(1e-13))?;
        Ok(rel_diff(&ops, &a, &b, norm(&ops, &field)))
    });
    checks.push(match agree {
        Ok(v) => InvariantCheck::new("fft vs cg projection", v, 1e-8),
        Err(e) => failed("fft vs cg projection", 1e-8, e),
    });

    checks.push(match dense_oracle(&mut rng, opts.curl_fault) {
        Ok(v) => InvariantCheck::new("matrix-free vs dense at N=2", v, 1e-13),
        Err(e) => failed("matrix-free vs dense at N=2", 1e-13, e),
    });
    checks.push(match constant_oracle(&grid, &ops) {
        Ok(v) => InvariantCheck::new("constant field exactness", v, 1e-9),
        Err(e) => failed("constant field exactness", 1e-9, e),
    });
    checks.push(match laminate_oracle(opts.n, opts.cell) {
        Ok(v) => InvariantCheck::new("laminate oracle", v, 1e-8),
        Err(e) => failed("laminate oracle", 1e-8, e),
    });
    Ok(checks)
}
