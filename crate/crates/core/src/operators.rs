//! Derivative matrices and matrix-free stiffness operators.
//!
//! `D_j` maps nodal values of a P1 function to its `x_j` derivative at the
//! element centroids. The stacked gradient `D_grad = [D1; D2; D3]` and the curl
//!
//! ```text
//!          [  0   D3  -D2 ]
//! D_curl = [ -D3   0   D1 ]
//!          [  D2  -D1   0 ]
//! ```
//!
//! act on one scalar potential and on three potentials respectively. Element
//! fields are stored as `[f64; 3]` per element; the three potentials are
//! stored channel-contiguous, `[ψ1 | ψ2 | ψ3]`, each of length `n_vox`.
//!
//! All voxels carry the same six tetrahedra, so one table of shape-function
//! gradients serves the whole grid. Transposed products are computed as
//! gathers over nodes, which keeps the parallel loops free of write races.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{kuhn_corners, PeriodicGrid};

pub type ElementField = Vec<[f64; 3]>;

/// The skew matrices turning potential gradients into divergence-free fields.
pub const Q_MATRICES: [[[f64; 3]; 3]; 3] = [
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
];

#[derive(Debug, Clone)]
pub struct DerivativeOperators {
    grid: PeriodicGrid,
    corners: [[[usize; 3]; 4]; 6],
    /// `grads[t][i]`: gradient of the hat function of local vertex `i` on tetrahedron `t`.
    grads: [[[f64; 3]; 4]; 6],
    /// For each voxel corner offset (bit-packed x|y<<1|z<<2), the (tet, vertex) pairs touching it.
    gather: [Vec<(usize, usize)>; 8],
    weight: f64,
    curl_fault: bool,
}

fn corner_code(c: [usize; 3]) -> usize {
    c[0] | (c[1] << 1) | (c[2] << 2)
}

fn corner_of_code(code: usize) -> [usize; 3] {
    [code & 1, (code >> 1) & 1, (code >> 2) & 1]
}

/// Gradients of the four barycentric coordinates of a tetrahedron.
pub fn shape_gradients(vertices: &[[f64; 3]; 4]) -> Option<[[f64; 3]; 4]> {
    let p0 = Vector3::from(vertices[0]);
    let edges = Matrix3::from_rows(&[
        (Vector3::from(vertices[1]) - p0).transpose(),
        (Vector3::from(vertices[2]) - p0).transpose(),
        (Vector3::from(vertices[3]) - p0).transpose(),
    ]);
    // edges · ∇λ_i = e_i for i = 1..3
    let inv = edges.try_inverse()?;
    let mut g = [[0.0; 3]; 4];
    for i in 1..4 {
        let col = inv.column(i - 1);
        g[i] = [col[0], col[1], col[2]];
        for d in 0..3 {
            g[0][d] -= col[d];
        }
    }
    Some(g)
}

impl DerivativeOperators {
    pub fn new(grid: &PeriodicGrid) -> Self {
        let h = grid.h();
        let corners: [[[usize; 3]; 4]; 6] = std::array::from_fn(kuhn_corners);
        let grads = std::array::from_fn(|t| {
            let vertices = corners[t].map(|c| [c[0] as f64 * h[0], c[1] as f64 * h[1], c[2] as f64 * h[2]]);
            shape_gradients(&vertices).expect("Kuhn tetrahedra are non-degenerate")
        });
        let mut gather: [Vec<(usize, usize)>; 8] = Default::default();
        for (t, cs) in corners.iter().enumerate() {
            for (i, c) in cs.iter().enumerate() {
                gather[corner_code(*c)].push((t, i));
            }
        }
        DerivativeOperators { grid: *grid, corners, grads, gather, weight: grid.element_volume(), curl_fault: false }
    }

    /// Copy with the sign of the `D3` block in the first curl row flipped.
    /// Only useful to check that the structural invariants detect a broken curl.
    #[doc(hidden)]
    pub fn with_curl_fault(mut self) -> Self {
        self.curl_fault = true;
        self
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// Quadrature weight (element volume) of the single centroid point.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn n_vox(&self) -> usize {
        self.grid.n_vox()
    }

    pub fn n_ele(&self) -> usize {
        self.grid.n_ele()
    }

    pub fn shape_gradient_table(&self) -> &[[[f64; 3]; 4]; 6] {
        &self.grads
    }

    /// Row `e` of `D_{axis+1}`: the four node ids and their entries.
    pub fn row(&self, axis: usize, e: usize) -> ([usize; 4], [f64; 4]) {
        let (v, t) = (e / 6, e % 6);
        let nodes = self.corners[t].map(|c| self.grid.corner_node(v, c));
        let vals = std::array::from_fn(|i| self.grads[t][i][axis]);
        (nodes, vals)
    }

    fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::LengthMismatch { expected, got })
        }
    }

    /// Voxel-corner values of `u` for voxel `v`, indexed by corner code.
    #[inline]
    fn voxel_corner_values(&self, u: &[f64], v: usize) -> [f64; 8] {
        std::array::from_fn(|code| u[self.grid.corner_node(v, corner_of_code(code))])
    }

    #[inline]
    fn tet_gradient(&self, t: usize, vals: &[f64; 8]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (i, c) in self.corners[t].iter().enumerate() {
            let x = vals[corner_code(*c)];
            let gi = &self.grads[t][i];
            g[0] += gi[0] * x;
            g[1] += gi[1] * x;
            g[2] += gi[2] * x;
        }
        g
    }

    /// `D_grad u`, one vector per element.
    pub fn grad(&self, u: &[f64]) -> Result<ElementField> {
        Self::check_len(self.n_vox(), u.len())?;
        let mut out = vec![[0.0; 3]; self.n_ele()];
        self.grad_into(u, &mut out);
        Ok(out)
    }

    pub(crate) fn grad_into(&self, u: &[f64], out: &mut [[f64; 3]]) {
        out.par_chunks_mut(6).enumerate().for_each(|(v, chunk)| {
            let vals = self.voxel_corner_values(u, v);
            for (t, g) in chunk.iter_mut().enumerate() {
                *g = self.tet_gradient(t, &vals);
            }
        });
    }

    /// `D_gradᵀ f` (no quadrature weight).
    pub fn grad_t(&self, f: &[[f64; 3]]) -> Result<Vec<f64>> {
        Self::check_len(self.n_ele(), f.len())?;
        let mut out = vec![0.0; self.n_vox()];
        self.grad_t_into(f, &mut out);
        Ok(out)
    }

    pub(crate) fn grad_t_into(&self, f: &[[f64; 3]], out: &mut [f64]) {
        self.gather_nodes(out, |e| f[e]);
    }

    /// `out[n] = Σ_{e ∋ n} ∇φ_n|_e · field(e)`, as a gather over nodes.
    #[inline]
    fn gather_nodes<F>(&self, out: &mut [f64], field: F)
    where
        F: Fn(usize) -> [f64; 3] + Sync,
    {
        let [n1, n2, n3] = self.grid.n();
        out.par_iter_mut().enumerate().for_each(|(node, o)| {
            let p = self.grid.voxel_coords(node);
            let mut acc = 0.0;
            for (code, pairs) in self.gather.iter().enumerate() {
                let c = corner_of_code(code);
                let back = |x: usize, d: usize, n: usize| if x < d { x + n - d } else { x - d };
                let v = self.grid.flat([back(p[0], c[0], n1), back(p[1], c[1], n2), back(p[2], c[2], n3)]);
                for &(t, i) in pairs {
                    let fe = field(6 * v + t);
                    let g = &self.grads[t][i];
                    acc += g[0] * fe[0] + g[1] * fe[1] + g[2] * fe[2];
                }
            }
            *o = acc;
        });
    }

    #[inline]
    pub(crate) fn curl_of_gradients(&self, g: &[[f64; 3]; 3]) -> [f64; 3] {
        let s = if self.curl_fault { -1.0 } else { 1.0 };
        [s * g[1][2] - g[2][1], g[2][0] - g[0][2], g[0][1] - g[1][0]]
    }

    #[inline]
    fn curl_transpose_channels(&self, f: [f64; 3]) -> [[f64; 3]; 3] {
        let s = if self.curl_fault { -1.0 } else { 1.0 };
        [[0.0, f[2], -f[1]], [-f[2], 0.0, s * f[0]], [f[1], -f[0], 0.0]]
    }

    /// `D_curl ψ` for `ψ = [ψ1 | ψ2 | ψ3]`.
    pub fn curl(&self, psi: &[f64]) -> Result<ElementField> {
        Self::check_len(3 * self.n_vox(), psi.len())?;
        let mut out = vec![[0.0; 3]; self.n_ele()];
        self.curl_into(psi, &mut out);
        Ok(out)
    }

    pub(crate) fn curl_into(&self, psi: &[f64], out: &mut [[f64; 3]]) {
        self.curl_map_into(psi, out, |_, w| w);
    }

    /// Computes `D_curl ψ` and stores `post(e, w_e)` per element.
    fn curl_map_into<F>(&self, psi: &[f64], out: &mut [[f64; 3]], post: F)
    where
        F: Fn(usize, [f64; 3]) -> [f64; 3] + Sync,
    {
        let nv = self.n_vox();
        let (p1, rest) = psi.split_at(nv);
        let (p2, p3) = rest.split_at(nv);
        out.par_chunks_mut(6).enumerate().for_each(|(v, chunk)| {
            let vals = [
                self.voxel_corner_values(p1, v),
                self.voxel_corner_values(p2, v),
                self.voxel_corner_values(p3, v),
            ];
            for (t, w) in chunk.iter_mut().enumerate() {
                let g = [self.tet_gradient(t, &vals[0]), self.tet_gradient(t, &vals[1]), self.tet_gradient(t, &vals[2])];
                *w = post(6 * v + t, self.curl_of_gradients(&g));
            }
        });
    }

    fn grad_map_into<F>(&self, u: &[f64], out: &mut [[f64; 3]], post: F)
    where
        F: Fn(usize, [f64; 3]) -> [f64; 3] + Sync,
    {
        out.par_chunks_mut(6).enumerate().for_each(|(v, chunk)| {
            let vals = self.voxel_corner_values(u, v);
            for (t, g) in chunk.iter_mut().enumerate() {
                *g = post(6 * v + t, self.tet_gradient(t, &vals));
            }
        });
    }

    /// `D_curlᵀ f` (no quadrature weight), returned as `[·|·|·]` channels.
    pub fn curl_t(&self, f: &[[f64; 3]]) -> Result<Vec<f64>> {
        Self::check_len(self.n_ele(), f.len())?;
        let mut out = vec![0.0; 3 * self.n_vox()];
        self.curl_t_into(f, &mut out);
        Ok(out)
    }

    pub(crate) fn curl_t_into(&self, f: &[[f64; 3]], out: &mut [f64]) {
        let nv = self.n_vox();
        for (p, chunk) in out.chunks_mut(nv).enumerate() {
            self.gather_nodes(chunk, |e| self.curl_transpose_channels(f[e])[p]);
        }
    }

    /// Volume-weighted inner product `w_q · Σ_e ⟨f_e, g_e⟩`.
    pub fn inner(&self, f: &[[f64; 3]], g: &[[f64; 3]]) -> f64 {
        self.weight
            * crate::krylov::det_sum(f.len(), |e| {
                let (a, b) = (&f[e], &g[e]);
                a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            })
    }

    /// Volume-weighted mean of each component over the cell.
    pub fn mean(&self, f: &[[f64; 3]]) -> [f64; 3] {
        let mut s = [0.0; 3];
        for x in f {
            for d in 0..3 {
                s[d] += x[d];
            }
        }
        s.map(|x| x / f.len() as f64)
    }

    /// Dense `D_grad` of shape `(3·n_ele) × n_vox`, rows ordered `[D1; D2; D3]`.
    /// Intended for tiny grids only.
    pub fn dense_grad(&self) -> DMatrix<f64> {
        let (ne, nv) = (self.n_ele(), self.n_vox());
        let mut m = DMatrix::zeros(3 * ne, nv);
        for axis in 0..3 {
            for e in 0..ne {
                let (nodes, vals) = self.row(axis, e);
                for (n, x) in nodes.iter().zip(vals) {
                    m[(axis * ne + e, *n)] += x;
                }
            }
        }
        m
    }

    /// Dense `D_curl` of shape `(3·n_ele) × (3·n_vox)` built from the `±D_j` block pattern.
    pub fn dense_curl(&self) -> DMatrix<f64> {
        let (ne, nv) = (self.n_ele(), self.n_vox());
        let dg = self.dense_grad();
        let d = |j: usize| dg.rows(j * ne, ne).into_owned();
        let s = if self.curl_fault { -1.0 } else { 1.0 };
        // (row block, column block, derivative, sign)
        let blocks = [
            (0, 1, 2, s),
            (0, 2, 1, -1.0),
            (1, 0, 2, -1.0),
            (1, 2, 0, 1.0),
            (2, 0, 1, 1.0),
            (2, 1, 0, -1.0),
        ];
        let mut m = DMatrix::zeros(3 * ne, 3 * nv);
        for (r, c, j, sign) in blocks {
            m.view_mut((r * ne, c * nv), (ne, nv)).copy_from(&(d(j) * sign));
        }
        m
    }
}

/// Interleaved element field `[f_e]` ↔ blocked vector `[f_·1 | f_·2 | f_·3]` used by the dense matrices.
pub fn to_blocked(f: &[[f64; 3]]) -> Vec<f64> {
    (0..3).flat_map(|d| f.iter().map(move |x| x[d])).collect()
}

/// Subtracts the mean of each of `channels` contiguous blocks of `x`.
///
/// Every transpose output sums to zero per channel in exact arithmetic; this
/// removes the rounding drift that would otherwise feed the constant kernel
/// of the singular stiffness matrices.
pub fn remove_channel_means(x: &mut [f64], channels: usize) {
    let len = x.len() / channels.max(1);
    if len == 0 {
        return;
    }
    for block in x.chunks_mut(len) {
        let m = crate::krylov::det_sum(block.len(), |i| block[i]) / block.len() as f64;
        block.par_iter_mut().for_each(|v| *v -= m);
    }
}

/// Matrix-free primal stiffness `K = w_q·D_gradᵀ A D_grad` with a reusable scratch field.
pub struct PrimalOperator<'a> {
    ops: &'a DerivativeOperators,
    coeff: &'a CoefficientField,
    scratch: ElementField,
}

impl<'a> PrimalOperator<'a> {
    pub fn new(ops: &'a DerivativeOperators, coeff: &'a CoefficientField) -> Result<Self> {
        DerivativeOperators::check_len(ops.n_ele(), coeff.len())?;
        Ok(PrimalOperator { ops, coeff, scratch: vec![[0.0; 3]; ops.n_ele()] })
    }
}

impl crate::krylov::LinearOperator for PrimalOperator<'_> {
    fn dim(&self) -> usize {
        self.ops.n_vox()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let w = self.ops.weight;
        let coeff = self.coeff;
        self.ops.grad_map_into(x, &mut self.scratch, |e, g| coeff.get(e).mul_vec(g).map(|c| c * w));
        self.ops.grad_t_into(&self.scratch, y);
        remove_channel_means(y, 1);
    }
}

/// Matrix-free dual stiffness `K_dual = w_q·D_curlᵀ A⁻¹ D_curl`.
pub struct DualOperator<'a> {
    ops: &'a DerivativeOperators,
    coeff: &'a CoefficientField,
    scratch: ElementField,
}

impl<'a> DualOperator<'a> {
    pub fn new(ops: &'a DerivativeOperators, coeff: &'a CoefficientField) -> Result<Self> {
        DerivativeOperators::check_len(ops.n_ele(), coeff.len())?;
        Ok(DualOperator { ops, coeff, scratch: vec![[0.0; 3]; ops.n_ele()] })
    }
}

impl crate::krylov::LinearOperator for DualOperator<'_> {
    fn dim(&self) -> usize {
        3 * self.ops.n_vox()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let w = self.ops.weight;
        let coeff = self.coeff;
        self.ops.curl_map_into(x, &mut self.scratch, |e, c| coeff.inverse(e).mul_vec(c).map(|v| v * w));
        self.ops.curl_t_into(&self.scratch, y);
        remove_channel_means(y, 3);
    }
}

/// Normal-equation operator `w_q·D_curlᵀ D_curl` of the L² projection onto `range(D_curl)`.
pub struct CurlNormalOperator<'a> {
    ops: &'a DerivativeOperators,
    scratch: ElementField,
}

impl<'a> CurlNormalOperator<'a> {
    pub fn new(ops: &'a DerivativeOperators) -> Self {
        CurlNormalOperator { ops, scratch: vec![[0.0; 3]; ops.n_ele()] }
    }
}

impl crate::krylov::LinearOperator for CurlNormalOperator<'_> {
    fn dim(&self) -> usize {
        3 * self.ops.n_vox()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let w = self.ops.weight;
        self.ops.curl_map_into(x, &mut self.scratch, |_, c| c.map(|v| v * w));
        self.ops.curl_t_into(&self.scratch, y);
        remove_channel_means(y, 3);
    }
}

pub fn apply_primal(ops: &DerivativeOperators, coeff: &CoefficientField, u: &[f64]) -> Result<Vec<f64>> {
    use crate::krylov::LinearOperator;
    DerivativeOperators::check_len(ops.n_vox(), u.len())?;
    let mut op = PrimalOperator::new(ops, coeff)?;
    let mut y = vec![0.0; ops.n_vox()];
    op.apply(u, &mut y);
    Ok(y)
}

pub fn apply_dual(ops: &DerivativeOperators, coeff: &CoefficientField, psi: &[f64]) -> Result<Vec<f64>> {
    use crate::krylov::LinearOperator;
    DerivativeOperators::check_len(3 * ops.n_vox(), psi.len())?;
    let mut op = DualOperator::new(ops, coeff)?;
    let mut y = vec![0.0; 3 * ops.n_vox()];
    op.apply(psi, &mut y);
    Ok(y)
}

/// `b = −w_q·D_gradᵀ A e^ξ`
pub fn rhs_primal(ops: &DerivativeOperators, coeff: &CoefficientField, xi: [f64; 3]) -> Vec<f64> {
    let w = ops.weight;
    let mut out = vec![0.0; ops.n_vox()];
    ops.gather_nodes(&mut out, |e| coeff.get(e).mul_vec(xi).map(|c| -w * c));
    remove_channel_means(&mut out, 1);
    out
}

/// `b_dual = −w_q·D_curlᵀ A⁻¹ e^α`
pub fn rhs_dual(ops: &DerivativeOperators, coeff: &CoefficientField, alpha: [f64; 3]) -> Vec<f64> {
    let w = ops.weight;
    let flux: ElementField = (0..ops.n_ele()).map(|e| coeff.inverse(e).mul_vec(alpha).map(|c| -w * c)).collect();
    let mut out = vec![0.0; 3 * ops.n_vox()];
    ops.curl_t_into(&flux, &mut out);
    remove_channel_means(&mut out, 3);
    out
}
