use std::time::Duration;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{certify_ordering, eig3_sym_unchecked, symmetrize, Certificate};
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::homogenize::{DualSolution, PrimalSolution, ProjectedDual};
use crate::krylov::SolverConfig;

/// Relative slack of the ordering certificates, scaled by `‖A*_h‖`.
pub const CERTIFICATE_REL_SLACK: f64 = 1e-9;

pub type Mat = [[f64; 3]; 3];

pub fn to_rows(m: &Matrix3<f64>) -> Mat {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

pub fn from_rows(r: &Mat) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n: [usize; 3],
    pub cell: [f64; 3],
    pub n_vox: usize,
    pub n_ele: usize,
    pub dofs_primal: usize,
    pub dofs_dual: usize,
}

impl From<&PeriodicGrid> for GridSummary {
    fn from(g: &PeriodicGrid) -> Self {
        GridSummary {
            n: g.n(),
            cell: g.a(),
            n_vox: g.n_vox(),
            n_ele: g.n_ele(),
            dofs_primal: g.n_vox(),
            dofs_dual: 3 * g.n_vox(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEigs {
    /// `eig(A*_h − (B*_h)⁻¹)`
    pub upper_minus_dual: Option<[f64; 3]>,
    /// `eig((B*_h)⁻¹ − (B̃*_h)⁻¹)`
    pub dual_minus_projected: Option<[f64; 3]>,
    /// `eig(A*_h − (B̃*_h)⁻¹)`
    pub upper_minus_projected: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCertificate {
    pub lower: String,
    pub upper: String,
    pub slack: f64,
    #[serde(flatten)]
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterations {
    pub primal: Option<[usize; 3]>,
    pub dual: Option<[usize; 3]>,
    /// The projected bound needs no iterations.
    pub projected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub primal_s: Option<f64>,
    pub dual_s: Option<f64>,
    pub projected_s: Option<f64>,
}

impl Timings {
    pub fn from_durations(primal: Option<Duration>, dual: Option<Duration>, projected: Option<Duration>) -> Self {
        Timings {
            primal_s: primal.map(|d| d.as_secs_f64()),
            dual_s: dual.map(|d| d.as_secs_f64()),
            projected_s: projected.map(|d| d.as_secs_f64()),
        }
    }
}

/// Results of one resolution. Diagonal entries are guaranteed bounds,
/// off-diagonal entries only estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub field: String,
    pub grid: GridSummary,
    pub solver: SolverConfig,
    /// `A*_h`
    pub upper: Option<Mat>,
    /// `B*_h`
    pub dual_matrix: Option<Mat>,
    /// `(B*_h)⁻¹`
    pub lower_dual: Option<Mat>,
    /// `B̃*_h`
    pub projected_matrix: Option<Mat>,
    /// `(B̃*_h)⁻¹`
    pub lower_projected: Option<Mat>,
    pub gap_eigs: GapEigs,
    pub certificates: Vec<NamedCertificate>,
    pub iterations: Iterations,
    pub entry_kinds: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

const ENTRY_KINDS: &str = "diagonal entries are guaranteed bounds; off-diagonal entries are estimates";

fn gap(upper: &Option<Mat>, lower: &Option<Mat>) -> Option<[f64; 3]> {
    Some(eig3_sym_unchecked(&symmetrize(&(from_rows(upper.as_ref()?) - from_rows(lower.as_ref()?)))))
}

impl BoundsReport {
    pub fn new(
        grid: &PeriodicGrid,
        field: impl Into<String>,
        solver: SolverConfig,
        primal: Option<&PrimalSolution>,
        dual: Option<&DualSolution>,
        projected: Option<&ProjectedDual>,
    ) -> Self {
        let upper = primal.map(|p| to_rows(&p.upper));
        let lower_dual = dual.map(|d| to_rows(&d.lower));
        let lower_projected = projected.map(|p| to_rows(&p.lower));
        let mut report = BoundsReport {
            field: field.into(),
            grid: grid.into(),
            solver,
            upper,
            dual_matrix: dual.map(|d| to_rows(&d.b_h)),
            lower_dual,
            projected_matrix: projected.map(|p| to_rows(&p.b_tilde)),
            lower_projected,
            gap_eigs: GapEigs {
                upper_minus_dual: gap(&upper, &lower_dual),
                dual_minus_projected: gap(&lower_dual, &lower_projected),
                upper_minus_projected: gap(&upper, &lower_projected),
            },
            certificates: Vec::new(),
            iterations: Iterations { primal: primal.map(|p| p.iterations), dual: dual.map(|d| d.iterations), projected: 0 },
            entry_kinds: ENTRY_KINDS.into(),
            timings: None,
        };
        report.certificates = report.compute_certificates();
        report
    }

    fn scale(&self) -> f64 {
        [&self.upper, &self.lower_dual, &self.lower_projected]
            .into_iter()
            .flatten()
            .next()
            .map(|m| from_rows(m).norm())
            .unwrap_or(1.0)
    }

    fn compute_certificates(&self) -> Vec<NamedCertificate> {
        let slack = CERTIFICATE_REL_SLACK * self.scale();
        let named = [
            ("(B*_h)^-1", &self.lower_dual, "A*_h", &self.upper),
            ("(B~*_h)^-1", &self.lower_projected, "(B*_h)^-1", &self.lower_dual),
            ("(B~*_h)^-1", &self.lower_projected, "A*_h", &self.upper),
        ];
        named
            .into_iter()
            .filter_map(|(ln, lo, un, up)| {
                let (lo, up) = (lo.as_ref()?, up.as_ref()?);
                Some(NamedCertificate {
                    lower: ln.into(),
                    upper: un.into(),
                    slack,
                    certificate: certify_ordering(&from_rows(lo), &from_rows(up), slack),
                })
            })
            .collect()
    }

    pub fn all_certified(&self) -> bool {
        self.certificates.iter().all(|c| c.certificate.ordered)
    }

    pub fn with_timings(mut self, t: Timings) -> Self {
        self.timings = Some(t);
        self
    }

    /// Copy with every float rounded to 12 significant digits.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        let m = |x: &mut Option<Mat>| {
            if let Some(m) = x.as_mut() {
                m.iter_mut().flatten().for_each(|v| *v = sig12(*v));
            }
        };
        let v = |x: &mut Option<[f64; 3]>| {
            if let Some(a) = x.as_mut() {
                a.iter_mut().for_each(|v| *v = sig12(*v));
            }
        };
        m(&mut r.upper);
        m(&mut r.dual_matrix);
        m(&mut r.lower_dual);
        m(&mut r.projected_matrix);
        m(&mut r.lower_projected);
        v(&mut r.gap_eigs.upper_minus_dual);
        v(&mut r.gap_eigs.dual_minus_projected);
        v(&mut r.gap_eigs.upper_minus_projected);
        for c in r.certificates.iter_mut() {
            c.slack = sig12(c.slack);
            c.certificate.min_gap_eig = sig12(c.certificate.min_gap_eig);
            c.certificate.gap_eigs = c.certificate.gap_eigs.map(sig12);
        }
        r.grid.cell = r.grid.cell.map(sig12);
        r.solver.rel_tol = sig12(r.solver.rel_tol);
        r
    }
}

/// Rounds to 12 significant decimal digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown format {other:?} (json|csv)"))),
        }
    }
}

/// Serializes a report deterministically. Timings are only written when
/// `include_timings` is set.
pub fn emit_report(report: &BoundsReport, format: ReportFormat, include_timings: bool) -> String {
    let mut r = report.rounded();
    if !include_timings {
        r.timings = None;
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from("quantity,row,col,value\n");
            let mats = [
                ("upper", &r.upper),
                ("dual_matrix", &r.dual_matrix),
                ("lower_dual", &r.lower_dual),
                ("projected_matrix", &r.projected_matrix),
                ("lower_projected", &r.lower_projected),
            ];
            for (name, m) in mats {
                if let Some(m) = m {
                    for (i, row) in m.iter().enumerate() {
                        for (j, x) in row.iter().enumerate() {
                            s.push_str(&format!("{name},{},{},{x:.11e}\n", i + 1, j + 1));
                        }
                    }
                }
            }
            let eigs = [
                ("gap_upper_minus_dual", &r.gap_eigs.upper_minus_dual),
                ("gap_dual_minus_projected", &r.gap_eigs.dual_minus_projected),
                ("gap_upper_minus_projected", &r.gap_eigs.upper_minus_projected),
            ];
            for (name, e) in eigs {
                if let Some(e) = e {
                    for (i, x) in e.iter().enumerate() {
                        s.push_str(&format!("{name},{},,{x:.11e}\n", i + 1));
                    }
                }
            }
            s
        }
    }
}

pub fn parse_report(text: &str) -> Result<BoundsReport> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub use super::convergence::{emit_study_csv, parse_study_csv};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::homogenize::{algorithm2, solve_dual_all, solve_primal_all, ProjectionMethod};

    fn sample() -> BoundsReport {
        let grid = PeriodicGrid::cube_2pi(3).unwrap();
        let coeff = CoefficientField::example1(&grid).unwrap();
        let cfg = SolverConfig::default();
        let p = solve_primal_all(&grid, &coeff, &cfg).unwrap();
        let d = solve_dual_all(&grid, &coeff, &cfg).unwrap();
        let q = algorithm2(&grid, &coeff, &p, ProjectionMethod::Fft).unwrap();
        BoundsReport::new(&grid, "example 1", cfg, Some(&p), Some(&d), Some(&q))
    }

    #[test]
    fn json_has_expected_keys_and_round_trips() {
        let r = sample().with_timings(Timings { primal_s: Some(0.1), dual_s: None, projected_s: None });
        let doc = emit_report(&r, ReportFormat::Json, true);
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        for key in ["grid", "upper", "lower_dual", "lower_projected", "gap_eigs", "iterations", "timings"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back = parse_report(&doc).unwrap();
        let rounded = r.rounded();
        for (a, b) in [(rounded.upper, back.upper), (rounded.lower_projected, back.lower_projected), (rounded.lower_dual, back.lower_dual)] {
            for (x, y) in a.unwrap().iter().flatten().zip(b.unwrap().iter().flatten()) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
        // against the unrounded values the error is the 12-digit rounding
        for (x, y) in r.upper.unwrap().iter().flatten().zip(back.upper.unwrap().iter().flatten()) {
            assert!((x - y).abs() <= 5e-12 * x.abs());
        }
        assert_eq!(emit_report(&back, ReportFormat::Json, true), doc);
    }

    #[test]
    fn emission_is_deterministic_without_timings() {
        let a = sample().with_timings(Timings { primal_s: Some(1.0), dual_s: Some(2.0), projected_s: None });
        let b = sample().with_timings(Timings { primal_s: Some(3.0), dual_s: Some(4.0), projected_s: None });
        assert_eq!(emit_report(&a, ReportFormat::Json, false), emit_report(&b, ReportFormat::Json, false));
        assert_eq!(emit_report(&a, ReportFormat::Csv, false), emit_report(&b, ReportFormat::Csv, false));
        assert!(!emit_report(&a, ReportFormat::Json, false).contains("timings"));
    }

    #[test]
    fn certificates_cover_the_chain() {
        let r = sample();
        assert_eq!(r.certificates.len(), 3);
        assert!(r.all_certified(), "{:?}", r.certificates);
    }

    #[test]
    fn sig12_rounding() {
        assert_eq!(sig12(1.234567890123456), 1.23456789012);
        assert_eq!(sig12(0.0), 0.0);
        assert_eq!(sig12(-2.0e-7), -2.0e-7);
    }
}
