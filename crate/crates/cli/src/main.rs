//! Command-line front end for the block random matrix density solver.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use blockrmt::density::{compute_density, DensityCurve, DensityOptions, DensityReport};
use blockrmt::mcsim::{compare, empirical_spectrum, Comparison, Histogram, SimConfig, SimMetadata};
use blockrmt::model::{parse_spec, ParsedSpec};
use blockrmt::oracle::{
    finite_n_moment, limiting_moment, recursive_moments, wishart_finite_n_moment,
    wishart_moments, wishart_moments_recursive, MAX_ENUMERATED,
};
use blockrmt::presets::{self, PRESET_HELP};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const EXIT_ARGS: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "blockrmt", version, about = "Limiting eigenvalue densities of Gaussian block random matrices")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the limiting density on a grid and write it as CSV.
    Solve(SolveArgs),
    /// Print limiting (and optionally finite-N) moments from the pairing oracle.
    Moments(MomentsArgs),
    /// Sample finite matrices and write the pooled eigenvalue histogram.
    Simulate(SimulateArgs),
    /// Compare a density CSV against a histogram CSV.
    Compare(CompareArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// JSON model file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in model.
    #[arg(long, help = format!("Built-in model: {PRESET_HELP}"))]
    preset: Option<String>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, allow_negative_numbers = true)]
    xmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    xmax: Option<f64>,
    #[arg(long, default_value_t = 1200)]
    points: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Extrapolate eps, 2 eps, 4 eps to eps = 0.
    #[arg(long)]
    richardson: bool,
    #[arg(long, default_value = "density.csv")]
    out: PathBuf,
    /// Also write a gnuplot script that plots the CSV.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    source: Source,
    /// Highest order: of X for self-adjoint models, of HH* for Wishart models.
    #[arg(long)]
    max_order: usize,
    /// Also print exact expectations at N rows per size unit.
    #[arg(long)]
    finite_n: Option<usize>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// Rows per size unit.
    #[arg(long = "N", alias = "n")]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "hist.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    density: PathBuf,
    #[arg(long)]
    hist: PathBuf,
    /// Point mass at zero; read from the density report next to the CSV when omitted.
    #[arg(long)]
    atom0: Option<f64>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Serialize)]
struct CompareReport {
    density: String,
    hist: String,
    atom0: f64,
    #[serde(flatten)]
    comparison: Comparison,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn args(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_ARGS,
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::args(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_ARGS)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_ARGS);
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_ARGS);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Solve(a) => solve(a),
        Command::Moments(a) => moments(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare_files(a),
    }
}

fn load(source: &Source) -> Result<ParsedSpec, Failure> {
    if let Some(name) = &source.preset {
        return presets::preset(name).map_err(|e| Failure::args(e.to_string()));
    }
    let path = source.spec.as_ref().expect("clap enforces one source");
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::args(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text)
        .map_err(|e| Failure::validation(format!("invalid model {}: {e}", path.display())))
}

/// `dir/stem.csv` -> `dir/stem.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::args(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn solve(a: SolveArgs) -> Result<u8, Failure> {
    let spec = load(&a.source)?;
    if a.points < 2 {
        return Err(Failure::args("--points must be at least 2"));
    }
    if !(a.epsilon > 0.0 && a.epsilon.is_finite()) {
        return Err(Failure::args("--epsilon must be positive"));
    }
    if let (Some(lo), Some(hi)) = (a.xmin, a.xmax) {
        if lo >= hi {
            return Err(Failure::args("--xmin must be below --xmax"));
        }
    }
    let opts = DensityOptions {
        xmin: a.xmin,
        xmax: a.xmax,
        points: a.points,
        epsilon: a.epsilon,
        richardson: a.richardson,
    };
    let result = compute_density(&spec, &opts);

    let mut buf = Vec::new();
    result.curve.write_csv(&mut buf)?;
    fs::write(&a.out, buf)?;
    let report: DensityReport = result.report(a.richardson);
    write_json(&sidecar(&a.out, "report.json"), &report)?;
    if let Some(gp) = &a.gnuplot {
        fs::write(gp, gnuplot_script(&a.out, &report))?;
    }
    if !result.curve.nonnegative() {
        eprintln!(
            "warning: density dipped to {:.3e} before clipping",
            result.curve.min_raw
        );
    }
    println!(
        "wrote {} ({} points, mass {:.6}, atom at 0 {:.6})",
        a.out.display(),
        result.curve.xs.len(),
        report.mass,
        report.atom0
    );
    if result.failures.is_empty() {
        return Ok(0);
    }
    let path = sidecar(&a.out, "failures.csv");
    let mut text = String::from("re,im,reason\n");
    for (z, reason) in &result.failures {
        text.push_str(&format!("{:.16e},{:.16e},\"{}\"\n", z.re, z.im, reason.replace('"', "'")));
    }
    fs::write(&path, text)?;
    eprintln!(
        "error: {} grid point(s) did not converge; see {}",
        result.failures.len(),
        path.display()
    );
    Ok(EXIT_NONCONVERGENCE)
}

fn gnuplot_script(csv: &Path, report: &DensityReport) -> String {
    let name = csv
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key off\n");
    s.push_str("set xlabel 'x'\n");
    s.push_str("set ylabel 'density'\n");
    s.push_str(&format!("set xrange [{}:{}]\n", report.bracket[0], report.bracket[1]));
    if report.atom0 > 0.0 {
        s.push_str(&format!("set title 'atom at 0: {:.6}'\n", report.atom0));
    }
    s.push_str(&format!("plot '{name}' every ::1 using 1:2 with lines lw 2\n"));
    s.push_str("pause mouse close\n");
    s
}

fn moments(a: MomentsArgs) -> Result<u8, Failure> {
    let spec = load(&a.source)?;
    let oracle = |e: blockrmt::oracle::OracleError| Failure::args(e.to_string());
    let (limits, finite): (Vec<f64>, Option<Vec<f64>>) = match &spec {
        ParsedSpec::Model(m) => {
            let limits = if a.max_order <= MAX_ENUMERATED {
                (0..=a.max_order)
                    .map(|k| limiting_moment(m, k))
                    .collect::<Result<_, _>>()
                    .map_err(oracle)?
            } else {
                recursive_moments(m, a.max_order).map_err(oracle)?
            };
            let finite = match a.finite_n {
                Some(n) => {
                    let n_total = (n as u64 * m.dims().total_units()) as f64;
                    Some(
                        (0..=a.max_order)
                            .map(|k| finite_n_moment(m, k, n_total))
                            .collect::<Result<_, _>>()
                            .map_err(oracle)?,
                    )
                }
                None => None,
            };
            (limits, finite)
        }
        ParsedSpec::Wishart(w) => {
            let limits = if 2 * a.max_order <= MAX_ENUMERATED {
                wishart_moments(w, a.max_order).map_err(oracle)?
            } else {
                wishart_moments_recursive(w, a.max_order).map_err(oracle)?
            };
            let finite = match a.finite_n {
                Some(n) => Some(
                    (0..=a.max_order)
                        .map(|k| wishart_finite_n_moment(w, k, n))
                        .collect::<Result<_, _>>()
                        .map_err(oracle)?,
                ),
                None => None,
            };
            (limits, finite)
        }
    };

    let mut text = String::from(if finite.is_some() {
        "order,limit,finite_n\n"
    } else {
        "order,limit\n"
    });
    for (k, lim) in limits.iter().enumerate() {
        match &finite {
            Some(f) => text.push_str(&format!("{k},{lim:.16e},{:.16e}\n", f[k])),
            None => text.push_str(&format!("{k},{lim:.16e}\n")),
        }
    }
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(0)
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let spec = load(&a.source)?;
    let cfg = SimConfig {
        n: a.n,
        reps: a.reps,
        seed: a.seed,
        bins: a.bins,
    };
    let start = Instant::now();
    let sim = empirical_spectrum(&spec, &cfg).map_err(|e| match e {
        blockrmt::mcsim::SimError::Unsupported => Failure::validation(e.to_string()),
        _ => Failure::args(e.to_string()),
    })?;
    let mut buf = Vec::new();
    sim.histogram.write_csv(&mut buf)?;
    fs::write(&a.out, buf)?;
    let meta = SimMetadata {
        seed: a.seed,
        reps: a.reps,
        n: a.n,
        bins: a.bins,
        n_samples: sim.histogram.n_samples,
        wall_time: start.elapsed().as_secs_f64(),
    };
    write_json(&sidecar(&a.out, "meta.json"), &meta)?;
    println!(
        "wrote {} ({} eigenvalues in {} bins)",
        a.out.display(),
        sim.histogram.n_samples,
        a.bins
    );
    Ok(0)
}

fn compare_files(a: CompareArgs) -> Result<u8, Failure> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| Failure::args(format!("cannot read {}: {e}", p.display())))
    };
    let report_path = sidecar(&a.density, "report.json");
    let report: Option<DensityReport> = if report_path.exists() {
        Some(serde_json::from_str(&read(&report_path)?).map_err(|e| {
            Failure::validation(format!("bad density report {}: {e}", report_path.display()))
        })?)
    } else {
        None
    };
    let atom0 = a.atom0.or(report.as_ref().map(|r| r.atom0)).unwrap_or(0.0);
    let hard_edge = report.as_ref().is_some_and(|r| r.hard_edge);
    let curve = DensityCurve::read_csv(&read(&a.density)?, f64::NAN, atom0)
        .map_err(|e| Failure::validation(format!("{}: {e}", a.density.display())))?
        .with_hard_edge(hard_edge);
    let hist = Histogram::read_csv(&read(&a.hist)?)
        .map_err(|e| Failure::validation(format!("{}: {e}", a.hist.display())))?;
    let comparison = compare(&curve, &hist);
    println!("l1 {:.6}, largest bin gap {:.6}", comparison.l1, comparison.sup_bin);
    write_json(
        &a.out,
        &CompareReport {
            density: a.density.display().to_string(),
            hist: a.hist.display().to_string(),
            atom0,
            comparison,
        },
    )?;
    Ok(0)
}
