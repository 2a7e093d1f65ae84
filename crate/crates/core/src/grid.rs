//! Periodic voxel grid on the cell `Y = (0,a1)×(0,a2)×(0,a3)`.
//!
//! Every voxel is split into six tetrahedra of equal volume, all sharing the
//! voxel diagonal from local corner `(0,0,0)` to `(1,1,1)` (Kuhn split).
//! Nodes sit at voxel corners and are identified modulo periodicity, so there
//! is exactly one node per voxel: node `(i,j,k)` is the lower corner of voxel
//! `(i,j,k)` and lives at `(i·h1, j·h2, k·h3)`.
//!
//! Flat indices are x-fastest: `id = i + n1·(j + n2·k)`. Element `e` of voxel
//! `v` has flat index `6·v + t`, `t` being the position of its permutation in
//! [`KUHN_PERMUTATIONS`].

use crate::error::{Error, Result};

/// Axis orderings of the six Kuhn tetrahedra. Permutation `σ` selects the
/// region `{x : x_σ0 ≥ x_σ1 ≥ x_σ2}` of the unit voxel, whose vertices are the
/// lattice path `0, e_σ0, e_σ0+e_σ1, (1,1,1)`.
pub const KUHN_PERMUTATIONS: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Local corner offsets of the four vertices of Kuhn tetrahedron `t`.
pub fn kuhn_corners(t: usize) -> [[usize; 3]; 4] {
    let p = KUHN_PERMUTATIONS[t];
    let mut corners = [[0usize; 3]; 4];
    for step in 0..3 {
        corners[step + 1] = corners[step];
        corners[step + 1][p[step]] = 1;
    }
    corners
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid {
    n: [usize; 3],
    a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tetrahedron {
    /// Global periodic node ids of the four vertices.
    pub nodes: [usize; 4],
    /// Unwrapped lattice coordinates of the vertices (may equal `n_j`).
    pub lattice: [[usize; 3]; 4],
    /// Vertex coordinates in the unwrapped frame of the owning voxel.
    pub vertices: [[f64; 3]; 4],
    pub centroid: [f64; 3],
}

impl Tetrahedron {
    pub fn signed_volume(&self) -> f64 {
        let [p0, p1, p2, p3] = self.vertices;
        let e = |p: [f64; 3]| [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]];
        det3([e(p1), e(p2), e(p3)]) / 6.0
    }

    /// Six times the signed volume in lattice units; an integer for lattice tets.
    pub fn lattice_det(&self) -> i64 {
        let l = self.lattice;
        let e = |q: [usize; 3]| {
            [
                q[0] as i64 - l[0][0] as i64,
                q[1] as i64 - l[0][1] as i64,
                q[2] as i64 - l[0][2] as i64,
            ]
        };
        let [a, b, c] = [e(l[1]), e(l[2]), e(l[3])];
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
    }
}

pub(crate) fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl PeriodicGrid {
    pub fn new(n: [usize; 3], a: [f64; 3]) -> Result<Self> {
        if let Some(j) = n.iter().position(|&nj| nj == 0) {
            return Err(Error::InvalidInput(format!("voxel count n{} must be positive", j + 1)));
        }
        if let Some(j) = a.iter().position(|&aj| !(aj > 0.0 && aj.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "cell length a{} must be positive and finite, got {}",
                j + 1,
                a[j]
            )));
        }
        Ok(PeriodicGrid { n, a })
    }

    /// Cube cell of edge `2π` with `n` voxels per edge, the benchmark setting.
    pub fn cube_2pi(n: usize) -> Result<Self> {
        let a = 2.0 * std::f64::consts::PI;
        Self::new([n; 3], [a; 3])
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }

    pub fn a(&self) -> [f64; 3] {
        self.a
    }

    pub fn h(&self) -> [f64; 3] {
        [
            self.a[0] / self.n[0] as f64,
            self.a[1] / self.n[1] as f64,
            self.a[2] / self.n[2] as f64,
        ]
    }

    pub fn n_vox(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// Periodic nodes coincide one-to-one with voxels.
    pub fn n_nodes(&self) -> usize {
        self.n_vox()
    }

    pub fn n_ele(&self) -> usize {
        6 * self.n_vox()
    }

    pub fn cell_volume(&self) -> f64 {
        self.a[0] * self.a[1] * self.a[2]
    }

    pub fn element_volume(&self) -> f64 {
        self.cell_volume() / self.n_ele() as f64
    }

    /// Flat node id of lattice point `(i,j,k)`, wrapping each index periodically.
    pub fn node_index(&self, i: i64, j: i64, k: i64) -> usize {
        let w = |x: i64, n: usize| x.rem_euclid(n as i64) as usize;
        self.flat([w(i, self.n[0]), w(j, self.n[1]), w(k, self.n[2])])
    }

    pub(crate) fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.n[0] * (c[1] + self.n[1] * c[2])
    }

    /// Lattice coordinates of a voxel (equivalently, of a node).
    pub fn voxel_coords(&self, v: usize) -> [usize; 3] {
        let i = v % self.n[0];
        let r = v / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    /// Node id reached from voxel `v` by the local corner offset `c`.
    pub(crate) fn corner_node(&self, v: usize, c: [usize; 3]) -> usize {
        let p = self.voxel_coords(v);
        let w = |x: usize, n: usize| if x >= n { x - n } else { x };
        self.flat([
            w(p[0] + c[0], self.n[0]),
            w(p[1] + c[1], self.n[1]),
            w(p[2] + c[2], self.n[2]),
        ])
    }

    pub fn tetrahedra_of_voxel(&self, v: usize) -> Result<[Tetrahedron; 6]> {
        if v >= self.n_vox() {
            return Err(Error::InvalidInput(format!(
                "voxel id {v} out of range (grid has {} voxels)",
                self.n_vox()
            )));
        }
        let base = self.voxel_coords(v);
        let h = self.h();
        Ok(std::array::from_fn(|t| {
            let corners = kuhn_corners(t);
            let lattice = corners.map(|c| [base[0] + c[0], base[1] + c[1], base[2] + c[2]]);
            let vertices = lattice.map(|q| [q[0] as f64 * h[0], q[1] as f64 * h[1], q[2] as f64 * h[2]]);
            let nodes = corners.map(|c| self.corner_node(v, c));
            let mut centroid = [0.0; 3];
            for p in &vertices {
                for d in 0..3 {
                    centroid[d] += 0.25 * p[d];
                }
            }
            Tetrahedron { nodes, lattice, vertices, centroid }
        }))
    }

    /// Centroid of element `e` (the single quadrature point).
    pub fn element_centroid(&self, e: usize) -> [f64; 3] {
        let (v, t) = (e / 6, e % 6);
        let base = self.voxel_coords(v);
        let h = self.h();
        let corners = kuhn_corners(t);
        std::array::from_fn(|d| {
            let s: usize = corners.iter().map(|c| c[d]).sum();
            (base[d] as f64 + s as f64 / 4.0) * h[d]
        })
    }
}
