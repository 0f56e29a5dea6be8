use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use interphase_cli::config::{Curve, Overrides, PlotStyle, SweepConfig};
use interphase_cli::sweep::{format_float, parse_csv, run_sweep};
use interphase_cli::validate::{run_suite, Report, SUITES};
use interphase_cli::{plot, THREADS_ENV};
use interphase_core::assemblage::{
    approx_sigma_star, exact_sigma_star_from_fractions, intermediate_band_warning, radius_from_fraction,
    reference_sigma_star, VolumeFractions,
};
use interphase_core::solver::{
    read_cell, solve_periodic, write_solution, CellDescription, GreenOperator, PeriodicCell, SolverOptions,
    DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};
use interphase_core::FieldVector;
use serde_json::json;

const BINARY_MAGIC: &[u8] = b"IPHASE01";

#[derive(Parser)]
#[command(name = "interphase", version, about = "Effective conductivity of composites with thin interphases")]
struct Cli {
    /// Worker threads for sweeps and validation.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the interphase conductivity and write a CSV.
    Sweep(SweepArgs),
    /// Render a sweep CSV as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "log-log")]
        style: PlotStyle,
    },
    /// Run a named validation suite, or `all`.
    Validate {
        #[arg(long)]
        suite: String,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve a periodic cell for one applied field.
    Solve(SolveArgs),
    /// Exact assemblage conductivity.
    Exact(Material),
    /// Reference value plus the first-order interphase correction.
    Approx(Material),
    /// Singly coated sphere conductivity (no interphase).
    Reference(Material),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV path; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the SVG named in the config.
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r3: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma3: Option<f64>,
    #[arg(long)]
    sigma2_lo: Option<f64>,
    #[arg(long)]
    sigma2_hi: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Comma-separated curve selectors.
    #[arg(long, value_delimiter = ',', value_enum)]
    outputs: Option<Vec<CurveArg>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveArg {
    Exact,
    Approx,
    Reference,
    HighLimit,
    LowLimit,
}

impl From<CurveArg> for Curve {
    fn from(c: CurveArg) -> Self {
        match c {
            CurveArg::Exact => Curve::Exact,
            CurveArg::Approx => Curve::Approx,
            CurveArg::Reference => Curve::Reference,
            CurveArg::HighLimit => Curve::HighLimit,
            CurveArg::LowLimit => Curve::LowLimit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum GreenArg {
    Rotated,
    Continuous,
}

#[derive(Args)]
struct SolveArgs {
    /// Cell as JSON description or binary file.
    #[arg(long)]
    cell: PathBuf,
    #[arg(long, value_enum)]
    e0: Axis,
    /// Binary solution output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    #[arg(long, value_enum, default_value = "rotated")]
    green: GreenArg,
}

/// Geometry is given by `theta1` or by `r1` and `r3`; the first-order
/// correction also needs `r1`.
#[derive(Args)]
struct Material {
    #[arg(long)]
    sigma1: f64,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    sigma3: f64,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r3: Option<f64>,
}

impl Material {
    fn theta1(&self) -> Result<f64> {
        match (self.theta1, self.r1, self.r3) {
            (Some(t), Some(r1), Some(r3)) => {
                let from_radii = (r1 / r3).powi(3);
                if (t - from_radii).abs() > 1e-12 {
                    bail!("--theta1 {t} inconsistent with (r1/r3)^3 = {from_radii}");
                }
                Ok(t)
            }
            (Some(t), _, _) => Ok(t),
            (None, Some(r1), Some(r3)) => Ok((r1 / r3).powi(3)),
            _ => bail!("give --theta1 or both --r1 and --r3"),
        }
    }

    fn r1_r3(&self) -> Result<(f64, f64)> {
        let theta1 = self.theta1()?;
        match (self.r1, self.r3) {
            (Some(r1), Some(r3)) => Ok((r1, r3)),
            (Some(r1), None) => Ok((r1, r1 / theta1.cbrt())),
            (None, Some(r3)) => Ok((r3 * theta1.cbrt(), r3)),
            (None, None) => bail!("the first-order correction needs --r1 or --r3"),
        }
    }

    fn sigma2(&self) -> Result<f64> {
        self.sigma2.context("--sigma2 is required")
    }

    fn theta2(&self) -> Result<f64> {
        self.theta2.context("--theta2 is required")
    }

    fn warn(&self, sigma2: f64) {
        if let Some(w) = intermediate_band_warning(self.sigma1, sigma2, self.sigma3) {
            eprintln!("warning: {w}");
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sweep(args: SweepArgs) -> Result<()> {
    let overrides = Overrides {
        r1: args.r1,
        r3: args.r3,
        theta2: args.theta2,
        sigma1: args.sigma1,
        sigma3: args.sigma3,
        lo: args.sigma2_lo,
        hi: args.sigma2_hi,
        points: args.points,
        outputs: args.outputs.map(|v| v.into_iter().map(Curve::from).collect()),
        csv: args.out,
    };
    let config = SweepConfig::load(&args.config)?.apply(&overrides)?;
    let csv = run_sweep(&config)?.to_csv();
    match &config.output.csv {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    if args.plot {
        let svg_path = config.output.svg.as_ref().context("--plot needs output.svg in the config")?;
        let svg = plot::render_svg(&parse_csv(&csv)?, config.output.style)?;
        write_file(svg_path, svg.as_bytes())?;
        eprintln!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn validate(suite: &str, report_path: Option<PathBuf>) -> Result<bool> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    let reports = names.iter().map(|n| run_suite(n)).collect::<Result<Vec<Report>, _>>()?;
    for r in &reports {
        eprint!("{}", r.summary());
    }
    let passed = reports.iter().all(|r| r.passed);
    let json = serde_json::to_string_pretty(&json!({ "passed": passed, "suites": reports }))?;
    match report_path {
        Some(p) => write_file(&p, json.as_bytes())?,
        None => println!("{json}"),
    }
    Ok(passed)
}

fn load_cell(path: &Path) -> Result<PeriodicCell> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return Ok(read_cell(bytes.as_slice())?);
    }
    let desc: CellDescription =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing cell description {}", path.display()))?;
    Ok(PeriodicCell::from_description(&desc)?)
}

fn solve(args: SolveArgs) -> Result<()> {
    let cell = load_cell(&args.cell)?;
    let axis = args.e0 as usize;
    if axis >= cell.dim() {
        bail!("--e0 axis {axis} out of range for a {}D cell", cell.dim());
    }
    let green = match args.green {
        GreenArg::Rotated => GreenOperator::Rotated,
        GreenArg::Continuous => GreenOperator::Continuous,
    };
    let options = SolverOptions { tolerance: args.tolerance, max_iterations: args.max_iterations, green };
    let sol = solve_periodic(&cell, &FieldVector::basis(cell.dim(), axis), &options)?;
    if let Some(out) = &args.out {
        let mut buf = Vec::new();
        write_solution(&sol, &mut buf)?;
        write_file(out, &buf)?;
    }
    let summary = json!({
        "shape": cell.shape(),
        "lengths": cell.lengths(),
        "applied_field": sol.applied_field().as_slice(),
        "effective_column": sol.effective_column().as_slice(),
        "energy": sol.energy(),
        "iterations": sol.iterations(),
        "residual": sol.residual(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn print_value(x: f64) {
    println!("{}", format_float(x));
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    match cli.command {
        Command::Sweep(args) => sweep(args)?,
        Command::Plot { input, out, style } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let table = parse_csv(&text).with_context(|| input.display().to_string())?;
            write_file(&out, plot::render_svg(&table, style)?.as_bytes())?;
        }
        Command::Validate { suite, report } => {
            if !validate(&suite, report)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Solve(args) => solve(args)?,
        Command::Exact(m) => {
            let (s2, t2) = (m.sigma2()?, m.theta2()?);
            m.warn(s2);
            let f = VolumeFractions::from_core_and_interphase(m.theta1()?, t2)?;
            print_value(exact_sigma_star_from_fractions(m.sigma1, s2, m.sigma3, &f)?);
        }
        Command::Approx(m) => {
            let (s2, t2) = (m.sigma2()?, m.theta2()?);
            m.warn(s2);
            let (r1, r3) = m.r1_r3()?;
            let h = radius_from_fraction(r1, r3, t2)? - r1;
            print_value(approx_sigma_star(m.sigma1, s2, m.sigma3, m.theta1()?, r1, h)?);
        }
        Command::Reference(m) => print_value(reference_sigma_star(m.sigma1, m.sigma3, m.theta1()?)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(2)
        }
    }
}
