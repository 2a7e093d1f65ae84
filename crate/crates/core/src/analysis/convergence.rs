use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::{from_rows, BoundsReport, Mat, Timings};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;
use crate::homogenize::{algorithm2_with, solve_dual_with, solve_primal_with, ProjectionMethod};
use crate::krylov::SolverConfig;
use crate::operators::DerivativeOperators;
use crate::sym3::Sym3;

/// Matrix entries tracked by a study: diagonals first, then off-diagonals.
pub const ENTRIES: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn entry_label((i, j): (usize, usize)) -> String {
    format!("{}{}", i + 1, j + 1)
}

/// Gaps at or below this are treated as exact and excluded from slope fits.
pub const EXACT_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Example1,
    Example2,
    Constant(Sym3),
    /// `axis` is 0-based.
    Laminate { axis: usize, m_a: Sym3, m_b: Sym3, fraction: f64 },
}

impl FieldSource {
    pub fn build(&self, grid: &PeriodicGrid) -> Result<CoefficientField> {
        match self {
            FieldSource::Example1 => CoefficientField::example1(grid),
            FieldSource::Example2 => CoefficientField::example2(grid),
            FieldSource::Constant(m) => CoefficientField::constant(grid, *m),
            FieldSource::Laminate { axis, m_a, m_b, fraction } => {
                CoefficientField::laminate(grid, *axis, *m_a, *m_b, *fraction)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            FieldSource::Example1 => "example 1".into(),
            FieldSource::Example2 => "example 2".into(),
            FieldSource::Constant(m) => format!("constant {:?}", m.components()),
            FieldSource::Laminate { axis, fraction, .. } => format!("laminate axis {} fraction {fraction}", axis + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub dofs_primal: usize,
    pub dofs_dual: usize,
    /// Entry `(i,j)` label such as `"11"` or `"23"`.
    pub entry: String,
    /// `(A*_h − (B*_h)⁻¹)_ij`
    pub gap_cg: Option<f64>,
    /// `(A*_h − (B̃*_h)⁻¹)_ij`
    pub gap_proj: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Per entry: least-squares slope of `log|gap_cg|` vs `log N` (`None` when not applicable).
    pub slopes_cg: Vec<(String, Option<f64>)>,
    pub slopes_proj: Vec<(String, Option<f64>)>,
    pub all_certified: bool,
}

/// Least-squares slope of `log y` against `log x`. `None` with fewer than two
/// points or when any `y` is not a positive finite number above [`EXACT_GAP`].
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|v| !(v.is_finite() && *v > EXACT_GAP)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn entry_gap(upper: &Option<Mat>, lower: &Option<Mat>, (i, j): (usize, usize)) -> Option<f64> {
    Some(from_rows(upper.as_ref()?)[(i, j)] - from_rows(lower.as_ref()?)[(i, j)])
}

impl ConvergenceStudy {
    /// Builds the table from per-resolution reports, sorted by `N = n1`.
    pub fn from_reports(reports: &[BoundsReport]) -> Result<Self> {
        let mut reports: Vec<&BoundsReport> = reports.iter().collect();
        reports.sort_by_key(|r| r.grid.n[0]);
        if reports.windows(2).any(|w| w[0].grid.n[0] == w[1].grid.n[0]) {
            return Err(Error::InvalidInput("resolutions must be distinct".into()));
        }
        let mut rows = Vec::new();
        for r in &reports {
            for e in ENTRIES {
                rows.push(ConvergenceRow {
                    n: r.grid.n[0],
                    dofs_primal: r.grid.dofs_primal,
                    dofs_dual: r.grid.dofs_dual,
                    entry: entry_label(e),
                    gap_cg: entry_gap(&r.upper, &r.lower_dual, e),
                    gap_proj: entry_gap(&r.upper, &r.lower_projected, e),
                });
            }
        }
        let ns: Vec<f64> = reports.iter().map(|r| r.grid.n[0] as f64).collect();
        let slopes = |pick: fn(&ConvergenceRow) -> Option<f64>| -> Vec<(String, Option<f64>)> {
            ENTRIES
                .iter()
                .map(|&e| {
                    let label = entry_label(e);
                    let gaps: Option<Vec<f64>> =
                        rows.iter().filter(|r| r.entry == label).map(|r| pick(r).map(f64::abs)).collect();
                    (label, gaps.and_then(|g| fit_slope(&ns, &g)))
                })
                .collect()
        };
        let slopes_cg = slopes(|r| r.gap_cg);
        let slopes_proj = slopes(|r| r.gap_proj);
        let all_certified = reports.iter().all(|r| r.all_certified());
        Ok(ConvergenceStudy { rows, slopes_cg, slopes_proj, all_certified })
    }

    pub fn slope_cg(&self, entry: &str) -> Option<f64> {
        self.slopes_cg.iter().find(|(e, _)| e == entry).and_then(|(_, s)| *s)
    }

    pub fn slope_proj(&self, entry: &str) -> Option<f64> {
        self.slopes_proj.iter().find(|(e, _)| e == entry).and_then(|(_, s)| *s)
    }
}

/// Which bounds to compute and how.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub solver: SolverConfig,
    /// Upper bound and projected lower bound.
    pub primal: bool,
    /// CG dual lower bound.
    pub dual: bool,
    pub projection: ProjectionMethod,
    pub record_timings: bool,
}

impl PipelineOptions {
    pub fn full(solver: SolverConfig) -> Self {
        PipelineOptions { solver, primal: true, dual: true, projection: ProjectionMethod::Fft, record_timings: false }
    }
}

/// Runs the requested bounds on one grid and collects them into a report.
pub fn run_pipeline(grid: &PeriodicGrid, coeff: &CoefficientField, label: &str, opts: &PipelineOptions) -> Result<BoundsReport> {
    if !opts.primal && !opts.dual {
        return Err(Error::InvalidInput("nothing to compute: both primal and dual disabled".into()));
    }
    let ops = DerivativeOperators::new(grid);
    let timed = |f: &mut dyn FnMut() -> Result<()>| -> Result<Duration> {
        let t = Instant::now();
        f()?;
        Ok(t.elapsed())
    };
    let (mut primal, mut dual, mut projected) = (None, None, None);
    let mut times = (None, None, None);
    if opts.primal {
        times.0 = Some(timed(&mut || {
            primal = Some(solve_primal_with(&ops, coeff, &opts.solver)?);
            Ok(())
        })?);
        let p = primal.as_ref().expect("primal computed");
        times.2 = Some(timed(&mut || {
            projected = Some(algorithm2_with(&ops, coeff, p, opts.projection)?);
            Ok(())
        })?);
    }
    if opts.dual {
        times.1 = Some(timed(&mut || {
            dual = Some(solve_dual_with(&ops, coeff, &opts.solver)?);
            Ok(())
        })?);
    }
    let report = BoundsReport::new(grid, label, opts.solver, primal.as_ref(), dual.as_ref(), projected.as_ref());
    Ok(if opts.record_timings { report.with_timings(Timings::from_durations(times.0, times.1, times.2)) } else { report })
}

/// Full pipeline (primal, dual, projected) at one cube resolution `n` per axis.
pub fn run_resolution(source: &FieldSource, n: usize, cell: [f64; 3], config: &SolverConfig) -> Result<BoundsReport> {
    let grid = PeriodicGrid::new([n; 3], cell)?;
    let coeff = source.build(&grid)?;
    run_pipeline(&grid, &coeff, &source.label(), &PipelineOptions::full(*config))
}

pub fn run_convergence(source: &FieldSource, ns: &[usize], cell: [f64; 3], config: &SolverConfig) -> Result<ConvergenceStudy> {
    if ns.len() < 2 {
        return Err(Error::InvalidInput("a convergence study needs at least two resolutions".into()));
    }
    let reports = ns
        .iter()
        .map(|&n| {
            run_resolution(source, n, cell, config)
                .map_err(|e| Error::InvalidInput(format!("resolution N={n}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ConvergenceStudy::from_reports(&reports)
}

pub const STUDY_HEADER: &str = "N,dofs_primal,dofs_dual,entry,gap_cg,gap_proj";

pub fn emit_study_csv(study: &ConvergenceStudy) -> String {
    let mut s = format!("{STUDY_HEADER}\n");
    let f = |x: Option<f64>| x.map(|v| format!("{v:.11e}")).unwrap_or_default();
    for r in &study.rows {
        writeln!(s, "{},{},{},{},{},{}", r.n, r.dofs_primal, r.dofs_dual, r.entry, f(r.gap_cg), f(r.gap_proj))
            .expect("writing to a String");
    }
    s
}

pub fn parse_study_csv(text: &str) -> Result<Vec<ConvergenceRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(STUDY_HEADER) {
        return Err(Error::Parse(format!("expected header {STUDY_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(Error::Parse(format!("expected 6 columns: {line:?}")));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer {s:?}")));
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| Error::Parse(format!("bad number {s:?}")))
                }
            };
            Ok(ConvergenceRow {
                n: int(cols[0])?,
                dofs_primal: int(cols[1])?,
                dofs_dual: int(cols[2])?,
                entry: cols[3].to_string(),
                gap_cg: opt(cols[4])?,
                gap_proj: opt(cols[5])?,
            })
        })
        .collect()
}
