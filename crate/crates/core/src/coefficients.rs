//! Element-wise constant coefficient fields.
//!
//! A field stores one symmetric positive definite matrix per element together
//! with its precomputed inverse, since the dual operator applies `A⁻¹` on every
//! iteration. Built-in fields are sampled at element centroids.
//!
//! Voxel files carry one matrix per voxel:
//!
//! ```text
//! HBVOX1\n
//! n1 n2 n3\n
//! a1 a2 a3\n
//! <n1·n2·n3 records of 6 little-endian f64: a11 a22 a33 a12 a13 a23, x fastest>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::sym3::Sym3;

pub const VOXEL_MAGIC: &str = "HBVOX1";

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    values: Vec<Sym3>,
    inverses: Vec<Sym3>,
    lambda_min: f64,
    lambda_max: f64,
}

/// Real sign function with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sines(x: [f64; 3]) -> [f64; 3] {
    x.map(|xj| (1.5 * xj).sin())
}

/// Anisotropic benchmark coefficient with discontinuities on the planes `sin(3x_j/2) = 0`.
pub fn example1_matrix(x: [f64; 3]) -> Sym3 {
    let [s1, s2, s3] = sines(x);
    let s12 = sign(s1 * s2);
    let s23 = sign(s2 * s3);
    let s123 = sign(s1 * s2 * s3);
    Sym3([7.0 + s12, 4.01 + s12, 3.0 + s23, -2.0 - s23, s123, 0.0])
}

/// Isotropic two-phase benchmark coefficient `(2 + sign(s1·s2·s3))·I`.
pub fn example2_matrix(x: [f64; 3]) -> Sym3 {
    let [s1, s2, s3] = sines(x);
    Sym3::scaled_identity(2.0 + sign(s1 * s2 * s3))
}

fn check_spd(m: &Sym3, voxel: usize) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidInput(format!("voxel {voxel} has non-finite coefficients")));
    }
    let lmin = m.eigenvalues()[0];
    if lmin > 0.0 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { voxel, eigenvalue: lmin })
    }
}

fn warn_unfitted(grid: &PeriodicGrid, name: &str) {
    let two_pi = 2.0 * std::f64::consts::PI;
    if grid.n().iter().any(|n| n % 3 != 0) {
        warn!(
            "{name}: voxel counts {:?} are not multiples of 3; discontinuities are not mesh-aligned \
             and the convergence rate degrades (bounds stay valid)",
            grid.n()
        );
    }
    if grid.a().iter().any(|a| (a - two_pi).abs() > 1e-12 * two_pi) {
        warn!("{name}: cell lengths {:?} differ from 2π", grid.a());
    }
}

impl CoefficientField {
    /// Validates every element matrix and precomputes inverses and extremal eigenvalues.
    pub fn from_elements(grid: &PeriodicGrid, values: Vec<Sym3>) -> Result<Self> {
        if values.len() != grid.n_ele() {
            return Err(Error::LengthMismatch { expected: grid.n_ele(), got: values.len() });
        }
        let mut lambda_min = f64::INFINITY;
        let mut lambda_max = f64::NEG_INFINITY;
        let mut inverses = Vec::with_capacity(values.len());
        for (e, m) in values.iter().enumerate() {
            check_spd(m, e / 6)?;
            let eig = m.eigenvalues();
            lambda_min = lambda_min.min(eig[0]);
            lambda_max = lambda_max.max(eig[2]);
            let inv = m.inverse().ok_or(Error::NotPositiveDefinite { voxel: e / 6, eigenvalue: eig[0] })?;
            inverses.push(inv);
        }
        Ok(CoefficientField { values, inverses, lambda_min, lambda_max })
    }

    /// One matrix per voxel, shared by its six tetrahedra.
    pub fn from_voxels(grid: &PeriodicGrid, voxels: &[Sym3]) -> Result<Self> {
        if voxels.len() != grid.n_vox() {
            return Err(Error::LengthMismatch { expected: grid.n_vox(), got: voxels.len() });
        }
        for (v, m) in voxels.iter().enumerate() {
            check_spd(m, v)?;
        }
        let values = voxels.iter().flat_map(|m| std::iter::repeat_n(*m, 6)).collect();
        Self::from_elements(grid, values)
    }

    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn([f64; 3]) -> Sym3) -> Result<Self> {
        let values = (0..grid.n_ele()).map(|e| f(grid.element_centroid(e))).collect();
        Self::from_elements(grid, values)
    }

    pub fn example1(grid: &PeriodicGrid) -> Result<Self> {
        warn_unfitted(grid, "example 1");
        Self::from_fn(grid, example1_matrix)
    }

    pub fn example2(grid: &PeriodicGrid) -> Result<Self> {
        warn_unfitted(grid, "example 2");
        Self::from_fn(grid, example2_matrix)
    }

    pub fn constant(grid: &PeriodicGrid, m: Sym3) -> Result<Self> {
        check_spd(&m, 0)?;
        Self::from_elements(grid, vec![m; grid.n_ele()])
    }

    /// Two-layer laminate normal to `axis` (0-based): `m_a` on the voxel layers
    /// with index `< fraction·n_axis`, `m_b` on the rest.
    pub fn laminate(grid: &PeriodicGrid, axis: usize, m_a: Sym3, m_b: Sym3, fraction: f64) -> Result<Self> {
        if axis > 2 {
            return Err(Error::InvalidInput(format!("laminate axis {axis} out of range 0..3")));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!("laminate fraction {fraction} outside [0,1]")));
        }
        let n = grid.n()[axis];
        let layers = fraction * n as f64;
        let split = layers.round();
        if (layers - split).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "laminate fraction {fraction} does not align with {n} voxel layers"
            )));
        }
        let split = split as usize;
        let voxels: Vec<Sym3> = (0..grid.n_vox())
            .map(|v| if grid.voxel_coords(v)[axis] < split { m_a } else { m_b })
            .collect();
        Self::from_voxels(grid, &voxels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, e: usize) -> &Sym3 {
        &self.values[e]
    }

    #[inline]
    pub fn inverse(&self, e: usize) -> &Sym3 {
        &self.inverses[e]
    }

    pub fn values(&self) -> &[Sym3] {
        &self.values
    }

    pub fn inverses(&self) -> &[Sym3] {
        &self.inverses
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Per-voxel matrices, if all six tetrahedra of every voxel agree exactly.
    pub fn voxel_values(&self) -> Option<Vec<Sym3>> {
        self.values
            .chunks_exact(6)
            .map(|c| c.iter().all(|m| m == &c[0]).then_some(c[0]))
            .collect()
    }

    /// Largest `‖A·A⁻¹ − I‖_max` over elements.
    pub fn inverse_defect(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inverses)
            .map(|(m, inv)| (m.to_matrix3() * inv.to_matrix3() - nalgebra::Matrix3::identity()).abs().max())
            .fold(0.0, f64::max)
    }
}

pub fn write_voxel_file(path: &Path, grid: &PeriodicGrid, field: &CoefficientField) -> Result<()> {
    let voxels = field.voxel_values().ok_or_else(|| {
        Error::InvalidInput("field varies within a voxel and cannot be stored per voxel".into())
    })?;
    let [n1, n2, n3] = grid.n();
    let [a1, a2, a3] = grid.a();
    let mut buf = format!("{VOXEL_MAGIC}\n{n1} {n2} {n3}\n{a1} {a2} {a3}\n").into_bytes();
    buf.reserve(voxels.len() * 48);
    for m in &voxels {
        for c in m.components() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parses a voxel file without a reference grid; returns the grid declared in its header.
pub fn read_voxel_file(path: &Path) -> Result<(PeriodicGrid, Vec<Sym3>)> {
    let bad = |reason: String| Error::VoxelFile { path: path.to_path_buf(), reason };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;

    let mut lines = Vec::with_capacity(3);
    let mut offset = 0;
    while lines.len() < 3 {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        lines.push(line.trim().to_string());
        offset += end + 1;
    }
    if lines[0] != VOXEL_MAGIC {
        return Err(bad(format!("bad magic {:?}, expected {VOXEL_MAGIC:?}", lines[0])));
    }
    let parse3 = |s: &str, what: &str| -> Result<Vec<String>> {
        let parts: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected 3 {what}, found {:?}", s)));
        }
        Ok(parts)
    };
    let n: Vec<usize> = parse3(&lines[1], "voxel counts")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad(format!("bad voxel count {s:?}"))))
        .collect::<Result<_>>()?;
    let a: Vec<f64> = parse3(&lines[2], "cell lengths")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad(format!("bad cell length {s:?}"))))
        .collect::<Result<_>>()?;
    let grid = PeriodicGrid::new([n[0], n[1], n[2]], [a[0], a[1], a[2]]).map_err(|e| bad(e.to_string()))?;

    let data = &bytes[offset..];
    let expected = grid.n_vox() * 48;
    if data.len() < expected {
        return Err(bad(format!(
            "truncated data: {} bytes, header dimensions {:?} need {expected}",
            data.len(),
            grid.n()
        )));
    }
    if data.len() > expected {
        return Err(bad(format!(
            "{} trailing bytes after voxel data for header dimensions {:?}",
            data.len() - expected,
            grid.n()
        )));
    }
    let voxels = data
        .chunks_exact(48)
        .map(|rec| {
            Sym3(std::array::from_fn(|c| {
                f64::from_le_bytes(rec[8 * c..8 * c + 8].try_into().expect("8-byte slice"))
            }))
        })
        .collect();
    Ok((grid, voxels))
}

/// Loads a voxel file whose header must match `grid`.
pub fn load_voxel_file(grid: &PeriodicGrid, path: &Path) -> Result<CoefficientField> {
    let (declared, voxels) = read_voxel_file(path)?;
    let bad = |reason: String| Error::VoxelFile { path: path.to_path_buf(), reason };
    if declared.n() != grid.n() {
        return Err(bad(format!(
            "dimension mismatch: file declares {:?} voxels, grid has {:?}",
            declared.n(),
            grid.n()
        )));
    }
    let close = declared.a().iter().zip(grid.a()).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs());
    if !close {
        return Err(bad(format!(
            "cell mismatch: file declares {:?}, grid has {:?}",
            declared.a(),
            grid.a()
        )));
    }
    CoefficientField::from_voxels(grid, &voxels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid6() -> PeriodicGrid {
        PeriodicGrid::cube_2pi(6).unwrap()
    }

    #[test]
    fn example1_sign_cases() {
        // s_j = sin(3x/2) > 0 for x in (0, 2π/3)
        let m = example1_matrix([0.5, 0.5, 0.5]);
        assert_eq!(m.rows(), [[8.0, -3.0, 1.0], [-3.0, 5.01, 0.0], [1.0, 0.0, 4.0]]);
        // s1 > 0, s2 < 0, s3 > 0: s1s2 < 0, s2s3 < 0, s1s2s3 < 0
        let m = example1_matrix([0.5, 2.5, 0.5]);
        assert_eq!(m.rows(), [[6.0, -1.0, -1.0], [-1.0, 3.01, 0.0], [-1.0, 0.0, 2.0]]);
    }

    #[test]
    fn example1_is_spd_everywhere() {
        let g = grid6();
        let f = CoefficientField::example1(&g).unwrap();
        for e in 0..g.n_ele() {
            let eig = f.get(e).eigenvalues();
            assert!(eig[0] > 0.0);
            assert!(eig[0] >= f.lambda_min() && eig[2] <= f.lambda_max());
        }
        assert!(f.inverse_defect() < 1e-12);
    }

    #[test]
    fn example2_values() {
        assert_eq!(example2_matrix([0.5, 0.5, 0.5]), Sym3::scaled_identity(3.0));
        assert_eq!(example2_matrix([2.5, 0.5, 0.5]), Sym3::scaled_identity(1.0));
        for n in [3, 6, 12] {
            let f = CoefficientField::example2(&PeriodicGrid::cube_2pi(n).unwrap()).unwrap();
            assert_eq!((f.lambda_min(), f.lambda_max()), (1.0, 3.0));
        }
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn example_fields_are_voxel_constant_when_fitted() {
        let g = grid6();
        assert!(CoefficientField::example1(&g).unwrap().voxel_values().is_some());
        assert!(CoefficientField::example2(&g).unwrap().voxel_values().is_some());
    }

    #[test]
    fn building_twice_is_deterministic() {
        let g = grid6();
        assert_eq!(CoefficientField::example1(&g).unwrap(), CoefficientField::example1(&g).unwrap());
    }

    #[test]
    fn constant_fields() {
        let g = PeriodicGrid::new([2, 2, 2], [1.0; 3]).unwrap();
        let f = CoefficientField::constant(&g, Sym3::IDENTITY).unwrap();
        assert!(f.values().iter().all(|m| *m == Sym3::IDENTITY));
        let f = CoefficientField::constant(&g, Sym3::diag([2.0, 3.0, 4.0])).unwrap();
        assert_eq!((f.lambda_min(), f.lambda_max()), (2.0, 4.0));
        let m = Sym3([2.0, 2.0, 1.0, 1.0, 0.0, 0.0]);
        let f = CoefficientField::constant(&g, m).unwrap();
        assert!((f.lambda_min() - 1.0).abs() < 1e-12 && (f.lambda_max() - 3.0).abs() < 1e-12);
        let bad = Sym3([1.0, 1.0, 1.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            CoefficientField::constant(&g, bad),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn laminate_layers() {
        let g = PeriodicGrid::new([4, 2, 2], [1.0; 3]).unwrap();
        let (a, b) = (Sym3::IDENTITY, Sym3::scaled_identity(3.0));
        let f = CoefficientField::laminate(&g, 0, a, b, 0.5).unwrap();
        for v in 0..g.n_vox() {
            let expect = if g.voxel_coords(v)[0] < 2 { a } else { b };
            assert!((0..6).all(|t| *f.get(6 * v + t) == expect));
        }
        let f0 = CoefficientField::laminate(&g, 0, a, b, 0.0).unwrap();
        assert!(f0.values().iter().all(|m| *m == b));
        let f1 = CoefficientField::laminate(&g, 0, a, b, 1.0).unwrap();
        assert!(f1.values().iter().all(|m| *m == a));
        assert!(CoefficientField::laminate(&g, 0, a, b, 1.0 / 3.0).is_err());
        assert!(CoefficientField::laminate(&g, 3, a, b, 0.5).is_err());
    }

    #[test]
    fn voxel_file_round_trip_is_bit_exact() {
        let g = grid6();
        let f = CoefficientField::example1(&g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex1.vox");
        write_voxel_file(&path, &g, &f).unwrap();
        let back = load_voxel_file(&g, &path).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn voxel_file_identity_records() {
        let g = PeriodicGrid::new([2, 1, 1], [1.0; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("id.vox");
        let mut bytes = b"HBVOX1\n2 1 1\n1 1 1\n".to_vec();
        for _ in 0..2 {
            for c in [1.0f64, 1.0, 1.0, 0.0, 0.0, 0.0] {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        fs::write(&path, &bytes).unwrap();
        let f = load_voxel_file(&g, &path).unwrap();
        assert!(f.values().iter().all(|m| *m == Sym3::IDENTITY));
    }

    #[test]
    fn voxel_file_rejects_indefinite_record() {
        let g = PeriodicGrid::new([1, 1, 1], [1.0; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vox");
        let mut bytes = b"HBVOX1\n1 1 1\n1 1 1\n".to_vec();
        for c in [1.0f64, 1.0, 1.0, 2.0, 0.0, 0.0] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        match load_voxel_file(&g, &path) {
            Err(Error::NotPositiveDefinite { voxel, eigenvalue }) => {
                assert_eq!(voxel, 0);
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("expected SPD failure, got {other:?}"),
        }
    }

    #[test]
    fn voxel_file_rejects_mismatch_and_truncation() {
        let g = grid6();
        let f = CoefficientField::example2(&g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex2.vox");
        write_voxel_file(&path, &g, &f).unwrap();

        let other = PeriodicGrid::cube_2pi(3).unwrap();
        let err = load_voxel_file(&other, &path).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_voxel_file(&g, &path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        fs::write(&path, b"HBVOX1\n6 6").unwrap();
        assert!(load_voxel_file(&g, &path).unwrap_err().to_string().contains("truncated"));

        fs::write(&path, b"HBVOX2\n1 1 1\n1 1 1\n").unwrap();
        assert!(load_voxel_file(&g, &path).unwrap_err().to_string().contains("magic"));
    }
}
