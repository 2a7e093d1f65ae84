use nalgebra::Matrix3;

/// Symmetric 3×3 matrix stored as `[a11, a22, a33, a12, a13, a23]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym3(pub [f64; 6]);

impl Sym3 {
    pub const IDENTITY: Sym3 = Sym3([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

    pub fn diag(d: [f64; 3]) -> Self {
        Sym3([d[0], d[1], d[2], 0.0, 0.0, 0.0])
    }

    pub fn scaled_identity(s: f64) -> Self {
        Sym3([s, s, s, 0.0, 0.0, 0.0])
    }

    pub fn components(&self) -> [f64; 6] {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        const IDX: [[usize; 3]; 3] = [[0, 3, 4], [3, 1, 5], [4, 5, 2]];
        self.0[IDX[i][j]]
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.get(i, j)))
    }

    #[inline]
    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let [a11, a22, a33, a12, a13, a23] = self.0;
        [
            a11 * v[0] + a12 * v[1] + a13 * v[2],
            a12 * v[0] + a22 * v[1] + a23 * v[2],
            a13 * v[0] + a23 * v[1] + a33 * v[2],
        ]
    }

    /// `vᵀ·M·w`
    #[inline]
    pub fn bilinear(&self, v: [f64; 3], w: [f64; 3]) -> f64 {
        let mw = self.mul_vec(w);
        v[0] * mw[0] + v[1] * mw[1] + v[2] * mw[2]
    }

    pub fn det(&self) -> f64 {
        crate::grid::det3(self.rows())
    }

    /// Closed-form inverse through the adjugate; `None` when singular.
    pub fn inverse(&self) -> Option<Sym3> {
        let [a11, a22, a33, a12, a13, a23] = self.0;
        let c11 = a22 * a33 - a23 * a23;
        let c22 = a11 * a33 - a13 * a13;
        let c33 = a11 * a22 - a12 * a12;
        let c12 = a13 * a23 - a12 * a33;
        let c13 = a12 * a23 - a13 * a22;
        let c23 = a12 * a13 - a11 * a23;
        let det = a11 * c11 + a12 * c12 + a13 * c13;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let r = 1.0 / det;
        Some(Sym3([c11 * r, c22 * r, c33 * r, c12 * r, c13 * r, c23 * r]))
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 3] {
        crate::analysis::eig3_sym_unchecked(&self.to_matrix3())
    }

    pub fn to_matrix3(&self) -> Matrix3<f64> {
        let r = self.rows();
        Matrix3::from_fn(|i, j| r[i][j])
    }

    /// Symmetric part of a general 3×3 matrix.
    pub fn from_matrix3(m: &Matrix3<f64>) -> Sym3 {
        let s = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        Sym3([m[(0, 0)], m[(1, 1)], m[(2, 2)], s(0, 1), s(0, 2), s(1, 2)])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_reproduces_identity() {
        let m = Sym3([8.0, 5.01, 4.0, -3.0, 1.0, 0.0]);
        let inv = m.inverse().unwrap();
        let p = m.to_matrix3() * inv.to_matrix3();
        assert!((p - Matrix3::identity()).abs().max() < 1e-14);
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Sym3([1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(m.inverse().is_none());
    }

    #[test]
    fn bilinear_matches_dense() {
        let m = Sym3([2.0, 3.0, 4.0, 0.5, -0.25, 0.125]);
        let (v, w) = ([1.0, -2.0, 0.5], [0.3, 0.7, -1.1]);
        let dense = nalgebra::Vector3::from(v).dot(&(m.to_matrix3() * nalgebra::Vector3::from(w)));
        assert!((m.bilinear(v, w) - dense).abs() < 1e-14);
    }
}
