//! Eigenvalues of symmetric 3×3 matrices, Loewner-order certificates,
//! convergence studies and report documents.

mod convergence;
mod eigen;
mod report;

pub use convergence::{
    fit_slope, run_convergence, run_pipeline, run_resolution, PipelineOptions, ConvergenceRow, ConvergenceStudy, FieldSource, ENTRIES, EXACT_GAP,
    STUDY_HEADER,
};
pub use eigen::{asymmetry, eig3_sym, eig3_sym_unchecked, jacobi_eigenvalues, symmetrize};
pub use report::{
    emit_report, emit_study_csv, from_rows, parse_report, parse_study_csv, sig12, to_rows, BoundsReport, GapEigs,
    GridSummary, Iterations, Mat, NamedCertificate, ReportFormat, Timings, CERTIFICATE_REL_SLACK,
};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Evidence that `lower ≼ upper` in the Loewner order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub ordered: bool,
    /// Smallest eigenvalue of `upper − lower`.
    pub min_gap_eig: f64,
    /// All eigenvalues of `upper − lower`, ascending.
    pub gap_eigs: [f64; 3],
}

/// Certifies `lower ≼ upper` up to `slack`: passes iff `λ_min(upper − lower) ≥ −slack`.
pub fn certify_ordering(lower: &Matrix3<f64>, upper: &Matrix3<f64>, slack: f64) -> Certificate {
    let gap_eigs = eig3_sym_unchecked(&symmetrize(&(upper - lower)));
    Certificate { ordered: gap_eigs[0] >= -slack, min_gap_eig: gap_eigs[0], gap_eigs }
}
