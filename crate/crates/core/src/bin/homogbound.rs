use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use homogbound::analysis::{
    emit_report, emit_study_csv, run_pipeline, BoundsReport, ConvergenceStudy, PipelineOptions, ReportFormat,
};
use homogbound::coefficients::{load_voxel_file, read_voxel_file, CoefficientField};
use homogbound::homogenize::ProjectionMethod;
use homogbound::krylov::SolverConfig;
use homogbound::verify::{run_invariant_suite, VerifyOptions};
use homogbound::{Error, PeriodicGrid, Sym3};

type Handler = fn(&CommonArgs) -> Result<u8, Error>;

const EXIT_ERROR: u8 = 1;
const EXIT_CERTIFICATE: u8 = 2;

#[derive(Parser)]
#[command(name = "homogbound", version, about = "Guaranteed bounds on periodic homogenized coefficients")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the bounds at one resolution.
    Run(CommonArgs),
    /// Sweep resolutions and fit convergence slopes.
    Converge(CommonArgs),
    /// Run the structural invariant suite.
    Verify(CommonArgs),
}

/// Every option of a run. Also the schema of `--config` files; flags override file values.
#[derive(Args, Serialize, Deserialize, Default, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct CommonArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,

    /// Built-in coefficient field (1 or 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2), conflicts_with_all = ["laminate", "coeff_file"])]
    example: Option<u8>,

    /// Laminate AXIS,FRAC,A,B (isotropic phases) or AXIS,FRAC,A1,A2,A3,B1,B2,B3 (diagonal phases); AXIS is 1-based.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "coeff_file")]
    laminate: Option<Vec<f64>>,

    /// Voxel coefficient file.
    #[arg(long)]
    coeff_file: Option<PathBuf>,

    /// Voxels per axis.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    n3: Option<usize>,

    /// Cell lengths a1,a2,a3 (default 2π each).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    cell: Option<Vec<f64>>,

    /// Relative CG residual tolerance.
    #[arg(long)]
    tol: Option<f64>,

    #[arg(long)]
    max_iter: Option<usize>,

    /// Skip the CG dual solve (upper and projected lower bound only).
    #[arg(long, conflicts_with = "dual_only")]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    skip_dual: bool,

    /// Only the CG dual lower bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    dual_only: bool,

    /// Project with CG on the normal equations instead of FFT.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    fallback_projection: bool,

    /// Output file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format: json or csv.
    #[arg(long)]
    format: Option<String>,

    /// Resolutions for `converge`, e.g. 6,12,24.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,

    /// Include wall-clock timings in the report.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    timings: bool,

    /// Test hook for `verify`: flips the sign of one curl block.
    #[arg(long, hide = true)]
    #[serde(skip)]
    inject_curl_fault: bool,
}

impl CommonArgs {
    /// File values first, then flags on top.
    fn merged(self) -> Result<Self, Error> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let base: CommonArgs =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let flags = self;
        // a field source given on the command line replaces the file's
        let flag_source = flags.example.is_some() || flags.laminate.is_some() || flags.coeff_file.is_some();
        let (example, laminate, coeff_file) = if flag_source {
            (flags.example, flags.laminate, flags.coeff_file)
        } else {
            (base.example, base.laminate, base.coeff_file)
        };
        Ok(CommonArgs {
            config: Some(path),
            example,
            laminate,
            coeff_file,
            n: flags.n.or(base.n),
            n1: flags.n1.or(base.n1),
            n2: flags.n2.or(base.n2),
            n3: flags.n3.or(base.n3),
            cell: flags.cell.or(base.cell),
            tol: flags.tol.or(base.tol),
            max_iter: flags.max_iter.or(base.max_iter),
            skip_dual: flags.skip_dual || base.skip_dual,
            dual_only: flags.dual_only || base.dual_only,
            fallback_projection: flags.fallback_projection || base.fallback_projection,
            out: flags.out.or(base.out),
            format: flags.format.or(base.format),
            n_list: flags.n_list.or(base.n_list),
            timings: flags.timings || base.timings,
            inject_curl_fault: flags.inject_curl_fault,
        })
    }

    fn solver(&self) -> Result<SolverConfig, Error> {
        let cfg = SolverConfig {
            rel_tol: self.tol.unwrap_or(SolverConfig::default().rel_tol),
            max_iter: self.max_iter,
            record_history: false,
        };
        cfg.validate().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(cfg)
    }

    fn cell(&self) -> Result<[f64; 3], Error> {
        match &self.cell {
            None => Ok([2.0 * std::f64::consts::PI; 3]),
            Some(c) if c.len() == 3 => Ok([c[0], c[1], c[2]]),
            Some(c) => Err(Error::InvalidInput(format!("--cell needs 3 lengths, got {}", c.len()))),
        }
    }

    fn explicit_n(&self) -> Option<[usize; 3]> {
        if self.n.is_none() && self.n1.is_none() && self.n2.is_none() && self.n3.is_none() {
            return None;
        }
        let base = self.n.unwrap_or(24);
        Some([self.n1.unwrap_or(base), self.n2.unwrap_or(base), self.n3.unwrap_or(base)])
    }

    fn format(&self, default: ReportFormat) -> Result<ReportFormat, Error> {
        self.format.as_deref().map_or(Ok(default), str::parse)
    }

    fn source_count(&self) -> usize {
        usize::from(self.example.is_some()) + usize::from(self.laminate.is_some()) + usize::from(self.coeff_file.is_some())
    }

    fn pipeline(&self) -> Result<PipelineOptions, Error> {
        let solver = self.solver()?;
        if self.skip_dual && self.dual_only {
            return Err(Error::InvalidInput("--skip-dual and --dual-only are exclusive".into()));
        }
        Ok(PipelineOptions {
            solver,
            primal: !self.dual_only,
            dual: !self.skip_dual,
            projection: if self.fallback_projection {
                ProjectionMethod::Cg(SolverConfig { rel_tol: solver.rel_tol.min(1e-12), ..solver })
            } else {
                ProjectionMethod::Fft
            },
            record_timings: self.timings,
        })
    }
}

enum Source {
    Example(u8),
    Laminate { axis: usize, fraction: f64, a: Sym3, b: Sym3 },
    File(PathBuf),
}

impl Source {
    fn from_args(args: &CommonArgs) -> Result<Source, Error> {
        if args.source_count() > 1 {
            return Err(Error::InvalidInput("give exactly one of --example, --laminate, --coeff-file".into()));
        }
        if let Some(p) = &args.coeff_file {
            return Ok(Source::File(p.clone()));
        }
        if let Some(v) = &args.laminate {
            let (a, b) = match v.len() {
                4 => (Sym3::scaled_identity(v[2]), Sym3::scaled_identity(v[3])),
                8 => (Sym3::diag([v[2], v[3], v[4]]), Sym3::diag([v[5], v[6], v[7]])),
                k => return Err(Error::InvalidInput(format!("--laminate takes 4 or 8 numbers, got {k}"))),
            };
            let axis = v[0];
            if ![1.0, 2.0, 3.0].contains(&axis) {
                return Err(Error::InvalidInput(format!("laminate axis must be 1, 2 or 3, got {axis}")));
            }
            return Ok(Source::Laminate { axis: axis as usize - 1, fraction: v[1], a, b });
        }
        Ok(Source::Example(args.example.unwrap_or(1)))
    }

    fn label(&self) -> String {
        match self {
            Source::Example(k) => format!("example {k}"),
            Source::Laminate { axis, fraction, .. } => format!("laminate axis {} fraction {fraction}", axis + 1),
            Source::File(p) => format!("voxel file {}", p.display()),
        }
    }

    fn build(&self, grid: &PeriodicGrid) -> Result<CoefficientField, Error> {
        match self {
            Source::Example(1) => CoefficientField::example1(grid),
            Source::Example(_) => CoefficientField::example2(grid),
            Source::Laminate { axis, fraction, a, b } => CoefficientField::laminate(grid, *axis, *a, *b, *fraction),
            Source::File(p) => load_voxel_file(grid, p),
        }
    }

    /// Grid for a single run; voxel files supply their own unless `--n*` is given.
    fn grid(&self, args: &CommonArgs) -> Result<PeriodicGrid, Error> {
        match (self, args.explicit_n()) {
            (Source::File(p), None) => {
                let (g, _) = read_voxel_file(p)?;
                match &args.cell {
                    Some(_) => PeriodicGrid::new(g.n(), args.cell()?),
                    None => Ok(g),
                }
            }
            (Source::File(p), Some(n)) => {
                let cell = match &args.cell {
                    Some(_) => args.cell()?,
                    None => read_voxel_file(p)?.0.a(),
                };
                PeriodicGrid::new(n, cell)
            }
            (_, n) => PeriodicGrid::new(n.unwrap_or([24; 3]), args.cell()?),
        }
    }
}

/// Writes `contents` to `path` via a temporary sibling and a rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn emit(out: &Option<PathBuf>, doc: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_atomic(p, doc),
        None => {
            print!("{doc}");
            Ok(())
        }
    }
}

fn fmt_mat(m: &[[f64; 3]; 3]) -> String {
    m.iter()
        .map(|r| format!("  [{:>10.4} {:>10.4} {:>10.4}]", r[0], r[1], r[2]))
        .collect::<Vec<_>>()
        .join("\n")
}

fn summarize(r: &BoundsReport) {
    let mut lines = vec![format!("{} on {:?} voxels", r.field, r.grid.n)];
    for (name, m) in [("A*_h (upper)", &r.upper), ("(B*_h)^-1 (lower)", &r.lower_dual), ("(B~*_h)^-1 (lower)", &r.lower_projected)] {
        if let Some(m) = m {
            lines.push(format!("{name}:\n{}", fmt_mat(m)));
        }
    }
    if let Some(it) = r.iterations.primal {
        lines.push(format!("CG iterations primal: {it:?}"));
    }
    if let Some(it) = r.iterations.dual {
        lines.push(format!("CG iterations dual:   {it:?}"));
    }
    for c in &r.certificates {
        lines.push(format!(
            "certificate {} <= {}: {} (min gap eigenvalue {:.3e}, eigenvalues {:.4e} {:.4e} {:.4e})",
            c.lower,
            c.upper,
            if c.certificate.ordered { "ok" } else { "VIOLATED" },
            c.certificate.min_gap_eig,
            c.certificate.gap_eigs[0],
            c.certificate.gap_eigs[1],
            c.certificate.gap_eigs[2]
        ));
    }
    lines.push("diagonal entries are guaranteed bounds, off-diagonal entries are estimates".into());
    eprintln!("{}", lines.join("\n"));
}

fn cmd_run(args: &CommonArgs) -> Result<u8, Error> {
    let source = Source::from_args(args)?;
    let grid = source.grid(args)?;
    let coeff = source.build(&grid)?;
    let report = run_pipeline(&grid, &coeff, &source.label(), &args.pipeline()?)?;
    let doc = emit_report(&report, args.format(ReportFormat::Json)?, args.timings);
    emit(&args.out, &doc)?;
    summarize(&report);
    Ok(if report.all_certified() { 0 } else { EXIT_CERTIFICATE })
}

fn cmd_converge(args: &CommonArgs) -> Result<u8, Error> {
    let source = Source::from_args(args)?;
    if matches!(source, Source::File(_)) {
        return Err(Error::InvalidInput("converge needs a field defined at every resolution (--example or --laminate)".into()));
    }
    let ns = args.n_list.clone().ok_or_else(|| Error::InvalidInput("converge needs --n-list".into()))?;
    if ns.len() < 2 {
        return Err(Error::InvalidInput(format!("--n-list needs at least two resolutions, got {ns:?}")));
    }
    let mut sorted = ns.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ns.len() {
        return Err(Error::InvalidInput(format!("--n-list has repeated resolutions: {ns:?}")));
    }
    let opts = args.pipeline()?;
    if !(opts.primal && opts.dual) {
        log::warn!("gaps need both the upper and a lower bound; missing entries are left empty");
    }
    let cell = args.cell()?;
    let mut reports = Vec::new();
    let mut failures = 0;
    for &n in &sorted {
        let result = PeriodicGrid::new([n; 3], cell)
            .and_then(|g| source.build(&g).and_then(|c| run_pipeline(&g, &c, &source.label(), &opts)));
        match result {
            Ok(r) => {
                eprintln!(
                    "N={n}: certificates {}",
                    if r.all_certified() { "ok" } else { "VIOLATED" }
                );
                reports.push(r);
            }
            Err(e) => {
                eprintln!("N={n}: failed: {e}");
                failures += 1;
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::InvalidInput("every resolution failed".into()));
    }
    let study = ConvergenceStudy::from_reports(&reports)?;
    let doc = match args.format(ReportFormat::Csv)? {
        ReportFormat::Csv => emit_study_csv(&study),
        ReportFormat::Json => serde_json::to_string_pretty(&study).expect("study serializes") + "\n",
    };
    emit(&args.out, &doc)?;
    println!("slopes of log|gap| vs log N");
    println!("{:<6} {:>12} {:>12}", "entry", "cg", "projected");
    let show = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    for ((e, c), (_, p)) in study.slopes_cg.iter().zip(&study.slopes_proj) {
        println!("{e:<6} {:>12} {:>12}", show(*c), show(*p));
    }
    Ok(if failures > 0 {
        EXIT_ERROR
    } else if study.all_certified {
        0
    } else {
        EXIT_CERTIFICATE
    })
}

fn cmd_verify(args: &CommonArgs) -> Result<u8, Error> {
    let n = args.explicit_n().unwrap_or([6; 3]);
    let opts = VerifyOptions { n, cell: args.cell()?, curl_fault: args.inject_curl_fault, ..Default::default() };
    let checks = run_invariant_suite(&opts)?;
    for c in &checks {
        println!(
            "{} {:<36} violation {:.3e} (tolerance {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.violation,
            c.tolerance
        );
    }
    if let Some(p) = &args.out {
        write_atomic(p, &(serde_json::to_string_pretty(&checks).expect("checks serialize") + "\n"))?;
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_ERROR })
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("HOMOGBOUND_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::InvalidInput(format!("HOMOGBOUND_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for certificate violations
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = init_threads().and_then(|()| {
        let (args, run): (CommonArgs, Handler) = match cli.command {
            Command::Run(a) => (a, cmd_run),
            Command::Converge(a) => (a, cmd_converge),
            Command::Verify(a) => (a, cmd_verify),
        };
        run(&args.merged()?)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
