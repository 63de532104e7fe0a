use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use optpde::harness::write_rows;
use optpde::{
    reference_field, solve_with_init, validate, BuiltinProblem, ExperimentSpec, InitKind,
    OptimizerConfig, ProblemSpec, Resolution, SchemePolicy,
};

/// Solve PDE boundary-value problems by minimizing a penalized finite-difference residual.
#[derive(Parser)]
#[command(name = "optpde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and print the result as JSON.
    Solve(SolveArgs),
    /// Run an experiment spec; write per-run CSV and a summary JSON.
    Experiment(ExperimentArgs),
    /// Write the reference solution of a builtin problem as CSV.
    Reference(ReferenceArgs),
    /// Run the self-checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Problem spec JSON, instead of a builtin problem.
    #[arg(long, conflicts_with = "problem")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "wave")]
    problem: Option<BuiltinProblem>,
    /// Grid as NXxNT; defaults to 10x10, or the config's own grid.
    #[arg(long)]
    grid: Option<Resolution>,
    /// Interior and boundary stencil orders, e.g. 2,4.
    #[arg(long, default_value = "2,2")]
    scheme: SchemePolicy,
    /// random, interp, rbf, cascade or cascade-rbf.
    #[arg(long, default_value = "random")]
    init: InitKind,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, default_value_t = optpde::warmstart::DEFAULT_RBF_SMOOTH)]
    rbf_smooth: f64,
    /// Include the solved field in the output.
    #[arg(long)]
    field: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Per-run CSV path; the summary goes next to it as <stem>.summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long, default_value = "wave")]
    problem: BuiltinProblem,
    #[arg(long, default_value = "50x50")]
    grid: Resolution,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Seed for the random gradient cases.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Experiment(a) => experiment(a),
        Command::Reference(a) => reference(a),
        Command::Validate(a) => run_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 2 for bad input, 1 for failures while solving.
fn exit_code(e: &anyhow::Error) -> ExitCode {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<optpde::Error>() {
            return ExitCode::from(if err.is_invalid_input() { 2 } else { 1 });
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return ExitCode::from(2);
        }
    }
    ExitCode::from(1)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        None => print_stdout(&format!("{text}\n"))?,
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (`optpde ... | head`) is not an error.
fn print_stdout(text: &str) -> io::Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn solve(a: SolveArgs) -> Result<ExitCode> {
    let (mut problem, builtin) = match &a.config {
        Some(path) => {
            let mut text = String::new();
            io::Read::read_to_string(&mut open(path)?, &mut text)?;
            (ProblemSpec::from_json(&text)?, None)
        }
        None => {
            let b = a.problem.unwrap_or(BuiltinProblem::Wave);
            let res = a.grid.unwrap_or(Resolution::square(10));
            (b.problem(res.n_x, res.n_t)?, Some(b))
        }
    };
    if let Some(res) = a.grid {
        problem = problem.with_resolution(res.n_x, res.n_t)?;
    }
    if let Some(l) = a.lambda {
        problem = problem.with_lambda(l);
    }
    problem.validate()?;
    let config = OptimizerConfig {
        max_iterations: a.max_iterations,
        ..OptimizerConfig::default()
    };
    config.validate()?;
    let ladder: Vec<Resolution> = (10..=50).step_by(5).map(Resolution::square).collect();
    let mut levels = solve_with_init(
        &problem,
        a.init,
        a.scheme,
        &config,
        a.seed,
        &ladder,
        a.rbf_smooth,
    )?;
    let last = levels.pop().ok_or_else(|| anyhow!("no levels solved"))?;
    let mut result = last.result;
    if let Some(b) = builtin {
        result = result.with_reference(&reference_field(b, &problem.grid)?)?;
    }
    let mut json = if a.field {
        result.to_json()
    } else {
        result.summary_json()
    };
    json["problem"] = builtin.map_or("custom", |b| b.name()).into();
    json["scheme"] = a.scheme.to_string().into();
    json["init"] = a.init.label().into();
    json["seed"] = a.seed.into();
    json["warm_start_levels"] = levels.iter().map(|l| l.summary_json()).collect();
    json["total_time"] = last.cumulative_time.into();
    write_output(a.out.as_deref(), &serde_json::to_string_pretty(&json)?)?;
    Ok(ExitCode::SUCCESS)
}

fn summary_path(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.summary.json"))
}

fn experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let mut spec = ExperimentSpec::from_reader(open(&a.config)?)?;
    if let Some(r) = a.runs {
        spec.runs = r;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if a.lambda.is_some() {
        spec.lambda = a.lambda;
    }
    if let Some(out) = a.out {
        spec.output = Some(out);
    }
    let csv_path = spec.output.clone().ok_or_else(|| {
        optpde::Error::InvalidArgument("no output path: set \"output\" or pass --out".into())
    })?;
    spec.validate()?;
    let result = optpde::run_experiment(&spec)?;

    let mut w = create(&csv_path)?;
    write_rows(&result.rows, &mut w)?;
    w.flush()?;
    let summary = summary_path(&csv_path);
    write_output(Some(&summary), &result.summary_json()?)?;

    print_stdout(&result.mae_table())?;
    eprintln!(
        "{} runs written to {}, summary in {}",
        result.rows.len(),
        csv_path.display(),
        summary.display()
    );
    for f in &result.summary.failures {
        eprintln!("run {} failed: {}", f.run_id, f.message);
    }
    Ok(ExitCode::SUCCESS)
}

fn reference(a: ReferenceArgs) -> Result<ExitCode> {
    let problem = a.problem.problem(a.grid.n_x, a.grid.n_t)?;
    let field = reference_field(a.problem, &problem.grid)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            field.write_csv(&mut w)?;
            w.flush()?;
        }
        None => {
            let mut buf = Vec::new();
            field.write_csv(&mut buf)?;
            print_stdout(&String::from_utf8_lossy(&buf))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_validate(a: ValidateArgs) -> Result<ExitCode> {
    let reports = validate::run_all(a.seed)?;
    for r in &reports {
        print_stdout(&format!(
            "{} {}: {:e} ({}; {})\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.bound,
            r.detail
        ))?;
    }
    if let Some(path) = &a.out {
        write_output(Some(path), &serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(if reports.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
