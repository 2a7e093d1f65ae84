use std::f64::consts::PI;

use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Frobenius norm of `M − Mᵀ` relative to that of `M`.
pub fn asymmetry(m: &Matrix3<f64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / scale
}

pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Ascending eigenvalues of a (nearly) symmetric matrix; rejects asymmetry above `1e-9`.
pub fn eig3_sym(m: &Matrix3<f64>) -> Result<[f64; 3]> {
    let asym = asymmetry(m);
    if asym > 1e-9 {
        return Err(Error::Asymmetric { asymmetry: asym });
    }
    Ok(eig3_sym_unchecked(&symmetrize(m)))
}

/// Closed-form trigonometric eigenvalues of the symmetric part of `m`, ascending.
/// Near-degenerate spectra, where `acos` loses accuracy, go through Jacobi rotations.
pub fn eig3_sym_unchecked(m: &Matrix3<f64>) -> [f64; 3] {
    let m = symmetrize(m);
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    if p1 == 0.0 {
        let mut d = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = m.trace() / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (m - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    if 1.0 - r.abs() < 1e-6 {
        return jacobi_eigenvalues(&m);
    }
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let middle = 3.0 * q - largest - smallest;
    [smallest, middle, largest]
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric 3×3 matrix, ascending.
pub fn jacobi_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
    let mut a = symmetrize(m);
    let scale = a.norm();
    for _sweep in 0..50 {
        let off = a[(0, 1)].abs() + a[(0, 2)].abs() + a[(1, 2)].abs();
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
        }
    }
    let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
    d.sort_by(f64::total_cmp);
    d
}
