//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Reference numbers are the published tables for Examples 1 and 2 (four
//! printed decimals). Criterion 6 runs N = 48 unless `HOMOGBOUND_SKIP_N48` is
//! set, in which case the wider fallback band over {6, 12, 24} is applied and
//! the line says so.

use std::process::ExitCode;
use std::time::Instant;

use homogbound::analysis::{fit_slope, from_rows, run_pipeline, BoundsReport, Mat, PipelineOptions, CERTIFICATE_REL_SLACK};
use homogbound::coefficients::CoefficientField;
use homogbound::krylov::SolverConfig;
use homogbound::verify::{run_invariant_suite, VerifyOptions};
use homogbound::{PeriodicGrid, Sym3};

struct Reference {
    n: usize,
    projected: Mat,
    dual: Mat,
    upper: Mat,
    eig_upper_dual: [f64; 3],
    eig_dual_projected: [f64; 3],
    cg_dual: [usize; 3],
    cg_primal: [usize; 3],
}

fn sym(d: [f64; 3], o: [f64; 3]) -> Mat {
    [[d[0], o[0], o[1]], [o[0], d[1], o[2]], [o[1], o[2], d[2]]]
}

fn iso(d: f64, o: f64) -> Mat {
    sym([d; 3], [o; 3])
}

fn example1_reference() -> Vec<Reference> {
    vec![
        Reference {
            n: 6,
            projected: sym([6.5702, 3.8983, 2.7496], [-2.1432, -0.0629, -0.0096]),
            dual: sym([6.6193, 3.9140, 2.7756], [-2.1350, -0.0562, -0.0064]),
            upper: sym([6.9126, 4.0453, 2.9602], [-2.0937, -0.0114, -0.0029]),
            eig_upper_dual: [0.1205, 0.1707, 0.3181],
            eig_dual_projected: [0.0135, 0.0243, 0.0528],
            cg_dual: [90, 89, 89],
            cg_primal: [36, 35, 36],
        },
        Reference {
            n: 12,
            projected: sym([6.7067, 3.9621, 2.8249], [-2.1203, -0.0471, -0.0083]),
            dual: sym([6.7239, 3.9675, 2.8367], [-2.1171, -0.0437, -0.0073]),
            upper: sym([6.8414, 4.0189, 2.9105], [-2.1012, -0.0253, -0.0051]),
            eig_upper_dual: [0.0475, 0.0677, 0.1275],
            eig_dual_projected: [0.0047, 0.0102, 0.0197],
            cg_dual: [361, 360, 364],
            cg_primal: [74, 73, 75],
        },
        Reference {
            n: 24,
            projected: sym([6.7625, 3.9867, 2.8594], [-2.1117, -0.0390, -0.0073]),
            dual: sym([6.7683, 3.9885, 2.8636], [-2.1106, -0.0378, -0.0070]),
            upper: sym([6.8091, 4.0063, 2.8891], [-2.1049, -0.0314, -0.0060]),
            eig_upper_dual: [0.0164, 0.0234, 0.0444],
            eig_dual_projected: [0.0015, 0.0036, 0.0066],
            cg_dual: [1404, 1398, 1410],
            cg_primal: [158, 156, 157],
        },
    ]
}

fn example2_reference() -> Vec<Reference> {
    vec![
        Reference {
            n: 6,
            projected: iso(1.7035, -0.0043),
            dual: iso(1.7066, -0.0043),
            upper: iso(1.9446, -0.0016),
            eig_upper_dual: [0.2353, 0.2353, 0.2434],
            eig_dual_projected: [0.0030, 0.0031, 0.0031],
            cg_dual: [65; 3],
            cg_primal: [28; 3],
        },
        Reference {
            n: 12,
            projected: iso(1.7831, -0.0023),
            dual: iso(1.7859, -0.0022),
            upper: iso(1.8938, -0.0002),
            eig_upper_dual: [0.1059, 0.1059, 0.1119],
            eig_dual_projected: [0.0028, 0.0028, 0.0029],
            cg_dual: [252; 3],
            cg_primal: [65; 3],
        },
        Reference {
            n: 24,
            projected: iso(1.8214, -0.0008),
            dual: iso(1.8231, -0.0008),
            upper: iso(1.8671, -0.0000),
            eig_upper_dual: [0.0433, 0.0433, 0.0456],
            eig_dual_projected: [0.0017, 0.0017, 0.0017],
            cg_dual: [974; 3],
            cg_primal: [131; 3],
        },
    ]
}

struct Outcome {
    passed: bool,
    detail: String,
}

struct Ledger {
    lines: Vec<(usize, &'static str, Outcome)>,
}

impl Ledger {
    fn record(&mut self, id: usize, title: &'static str, outcome: Outcome) {
        println!("{} criterion {id} ({title}): {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.detail);
        self.lines.push((id, title, outcome));
    }
}

fn run(example: u8, n: usize, solver: SolverConfig) -> BoundsReport {
    let grid = PeriodicGrid::cube_2pi(n).expect("grid");
    let coeff = match example {
        1 => CoefficientField::example1(&grid),
        _ => CoefficientField::example2(&grid),
    }
    .expect("field");
    let t = Instant::now();
    let r = run_pipeline(&grid, &coeff, &format!("example {example}"), &PipelineOptions::full(solver))
        .unwrap_or_else(|e| panic!("example {example}, N={n}: {e}"));
    eprintln!("  example {example} N={n} rel_tol {:e}: {:.1}s", solver.rel_tol, t.elapsed().as_secs_f64());
    r
}

fn max_dev(a: &Mat, b: &Mat) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_dev3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn table_check(label: &str, reports: &[BoundsReport], refs: &[Reference]) -> (f64, Vec<String>) {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (r, t) in reports.iter().zip(refs) {
        let d = [
            max_dev(r.upper.as_ref().unwrap(), &t.upper),
            max_dev(r.lower_dual.as_ref().unwrap(), &t.dual),
            max_dev(r.lower_projected.as_ref().unwrap(), &t.projected),
        ];
        worst = d.iter().fold(worst, |m, x| m.max(*x));
        parts.push(format!("{label} N={}: upper {:.1e}, dual {:.1e}, projected {:.1e}", t.n, d[0], d[1], d[2]));
    }
    (worst, parts)
}

fn eig_check(reports: &[BoundsReport], refs: &[Reference]) -> f64 {
    reports
        .iter()
        .zip(refs)
        .map(|(r, t)| {
            let a = max_dev3(r.gap_eigs.upper_minus_dual.as_ref().unwrap(), &t.eig_upper_dual);
            let b = max_dev3(r.gap_eigs.dual_minus_projected.as_ref().unwrap(), &t.eig_dual_projected);
            a.max(b)
        })
        .fold(0.0, f64::max)
}

fn chain_certified(r: &BoundsReport) -> (bool, f64) {
    let upper = from_rows(r.upper.as_ref().unwrap());
    let dual = from_rows(r.lower_dual.as_ref().unwrap());
    let proj = from_rows(r.lower_projected.as_ref().unwrap());
    let slack = CERTIFICATE_REL_SLACK * upper.norm();
    let a = homogbound::analysis::certify_ordering(&dual, &upper, slack);
    let b = homogbound::analysis::certify_ordering(&proj, &dual, slack);
    (a.ordered && b.ordered, a.min_gap_eig.min(b.min_gap_eig))
}

fn exactness() -> Outcome {
    let grid = PeriodicGrid::cube_2pi(6).unwrap();
    let cfg = SolverConfig::default();
    let m = Sym3([5.0, 3.0, 2.0, 1.0, -0.5, 0.25]);
    let coeff = CoefficientField::constant(&grid, m).unwrap();
    let r = run_pipeline(&grid, &coeff, "constant", &PipelineOptions::full(cfg)).unwrap();
    let exact = [[5.0, 1.0, -0.5], [1.0, 3.0, 0.25], [-0.5, 0.25, 2.0]];
    let constant = [&r.upper, &r.lower_dual, &r.lower_projected]
        .iter()
        .map(|x| max_dev(x.as_ref().unwrap(), &exact))
        .fold(0.0, f64::max);

    // layers across axis 3 with thicknesses 1/3 and 2/3
    let grid = PeriodicGrid::new([4, 5, 6], [1.0, 1.5, 2.0]).unwrap();
    let (a, b) = (Sym3::diag([1.0, 2.0, 5.0]), Sym3::diag([4.0, 0.5, 1.0]));
    let coeff = CoefficientField::laminate(&grid, 2, a, b, 1.0 / 3.0).unwrap();
    let r = run_pipeline(&grid, &coeff, "laminate", &PipelineOptions::full(SolverConfig::with_tol(1e-12))).unwrap();
    let (fa, fb) = (1.0 / 3.0, 2.0 / 3.0);
    let exact = sym([fa * 1.0 + fb * 4.0, fa * 2.0 + fb * 0.5, 1.0 / (fa / 5.0 + fb / 1.0)], [0.0; 3]);
    let laminate = [&r.upper, &r.lower_dual, &r.lower_projected]
        .iter()
        .map(|x| max_dev(x.as_ref().unwrap(), &exact))
        .fold(0.0, f64::max);
    Outcome {
        passed: constant <= 1e-9 && laminate <= 1e-8,
        detail: format!("constant field max deviation {constant:.2e} (tol 1e-9), laminate {laminate:.2e} (tol 1e-8)"),
    }
}

fn main() -> ExitCode {
    let mut ledger = Ledger { lines: Vec::new() };
    let tight = SolverConfig::default();
    let (ref1, ref2) = (example1_reference(), example2_reference());

    eprintln!("running Example 1 and 2 at N = 6, 12, 24 with rel_tol 1e-9");
    let ex1: Vec<BoundsReport> = ref1.iter().map(|t| run(1, t.n, tight)).collect();
    let ex2: Vec<BoundsReport> = ref2.iter().map(|t| run(2, t.n, tight)).collect();

    let (w1, parts1) = table_check("example 1", &ex1, &ref1);
    for p in &parts1 {
        eprintln!("  {p}");
    }
    ledger.record(1, "Table 1 reproduction", Outcome {
        passed: w1 <= 1e-3,
        detail: format!("max |entry - paper| = {w1:.2e} over 27 entries x 3 resolutions (tol 1e-3)"),
    });

    let (w2, parts2) = table_check("example 2", &ex2, &ref2);
    for p in &parts2 {
        eprintln!("  {p}");
    }
    let up24 = ex2[2].upper.unwrap();
    let off = [up24[0][1], up24[0][2], up24[1][2]].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    ledger.record(2, "Table 2 reproduction", Outcome {
        passed: w2 <= 1e-3 && off < 5e-4,
        detail: format!("max |entry - paper| = {w2:.2e} (tol 1e-3); N=24 off-diagonal |A*_h| max {off:.2e} (tol 5e-4)"),
    });

    let e = eig_check(&ex1, &ref1).max(eig_check(&ex2, &ref2));
    ledger.record(3, "eigenvalue-gap lines", Outcome {
        passed: e <= 2e-3,
        detail: format!("max eigenvalue deviation {e:.2e} over 6 cells (tol 2e-3)"),
    });

    eprintln!("running loose-tolerance solves (rel_tol 1e-3)");
    let loose = SolverConfig::with_tol(1e-3);
    let mut all = true;
    let mut details = Vec::new();
    for example in [1, 2] {
        for n in [6, 12] {
            let r = run(example, n, loose);
            let (ok, gap) = chain_certified(&r);
            all &= ok;
            details.push(format!("ex{example} N={n} min gap {gap:.2e}"));
        }
    }
    ledger.record(4, "ordering at loose tolerance", Outcome { passed: all, detail: details.join(", ") });

    ledger.record(5, "exactness oracles", exactness());

    let skip48 = std::env::var_os("HOMOGBOUND_SKIP_N48").is_some();
    let mut conv: Vec<(f64, &BoundsReport)> = ex1.iter().map(|r| (r.grid.n[0] as f64, r)).collect();
    let ex48;
    if !skip48 {
        eprintln!("running Example 1 at N = 48 (set HOMOGBOUND_SKIP_N48 to use the fallback band)");
        ex48 = run(1, 48, tight);
        conv.push((48.0, &ex48));
    }
    let (lo, hi) = if skip48 { (-2.3, -1.3) } else { (-2.3, -1.7) };
    let ns: Vec<f64> = conv.iter().map(|(n, _)| *n).collect();
    let slopes: Vec<Option<f64>> = (0..3)
        .map(|i| {
            let gaps: Vec<f64> = conv
                .iter()
                .map(|(_, r)| r.upper.unwrap()[i][i] - r.lower_dual.unwrap()[i][i])
                .collect();
            fit_slope(&ns, &gaps)
        })
        .collect();
    let ok = slopes.iter().all(|s| s.is_some_and(|s| (lo..=hi).contains(&s)));
    let show = |v: &[Option<f64>]| v.iter().map(|s| s.map_or("n/a".into(), |v| format!("{v:.3}"))).collect::<Vec<_>>().join(", ");
    // local rate per refinement step, entry 11
    let local: Vec<String> = conv
        .windows(2)
        .map(|w| {
            let g = |r: &BoundsReport| r.upper.unwrap()[0][0] - r.lower_dual.unwrap()[0][0];
            format!("{:.3}", (g(w[1].1) / g(w[0].1)).ln() / (w[1].0 / w[0].0).ln())
        })
        .collect();
    ledger.record(6, "convergence rate", Outcome {
        passed: ok,
        detail: format!(
            "diagonal gap slopes over N = {ns:?}: {} (band [{lo}, {hi}]{}); local rates of entry 11: {}",
            show(&slopes),
            if skip48 { ", fallback band without N=48" } else { "" },
            local.join(", ")
        ),
    });

    let t = Instant::now();
    let checks = run_invariant_suite(&VerifyOptions::default()).expect("suite runs");
    for c in &checks {
        eprintln!("  {} {} violation {:.2e} (tol {:.0e})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.violation, c.tolerance);
    }
    let failing: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ledger.record(7, "structural invariant suite", Outcome {
        passed: failing.is_empty(),
        detail: format!(
            "{} invariants at N=6 in {:.1}s{}",
            checks.len(),
            t.elapsed().as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
        ),
    });

    let diag: Vec<[f64; 3]> = ex1.iter().map(|r| {
        let u = r.upper.unwrap();
        [u[0][0], u[1][1], u[2][2]]
    }).collect();
    let mono = diag.windows(2).all(|w| (0..3).all(|i| w[1][i] <= w[0][i] + 1e-9));
    ledger.record(8, "upper-bound monotonicity", Outcome {
        passed: mono,
        detail: format!("diag(A*_h) at N=6,12,24: {diag:.4?}"),
    });

    let mut worst_ratio: f64 = 1.0;
    for (reports, refs) in [(&ex1, &ref1), (&ex2, &ref2)] {
        for (r, t) in reports.iter().zip(refs.iter()) {
            let pairs = r.iterations.primal.unwrap().into_iter().zip(t.cg_primal)
                .chain(r.iterations.dual.unwrap().into_iter().zip(t.cg_dual));
            for (ours, paper) in pairs {
                let ratio = (ours as f64 / paper as f64).max(paper as f64 / ours.max(1) as f64);
                worst_ratio = worst_ratio.max(ratio);
            }
        }
    }
    ledger.record(9, "CG iteration counts (informational)", Outcome {
        passed: worst_ratio <= 3.0,
        detail: format!("worst ratio to the published counts {worst_ratio:.2} (limit 3)"),
    });

    let failed: Vec<usize> = ledger.lines.iter().filter(|(_, _, o)| !o.passed).map(|(id, _, _)| *id).collect();
    println!("{} of {} criteria passed", ledger.lines.len() - failed.len(), ledger.lines.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
