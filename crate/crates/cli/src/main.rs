use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gmanova::checks::cross_check;
use gmanova::io::{self, ExperimentConfig};
use gmanova::{
    scenarios, DesignSpec, DiagnosticsReport, Error, ScenarioKind, SimulationSummary, TestPlan, TestReport,
    TwoWayEffect,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NO_BALANCING: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gmanova",
    version,
    about = "Bias-corrected trace test for LΘR' = O in high-dimensional GMANOVA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the test on a grouped CSV data file.
    Test(TestArgs),
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
    /// Cross-check the fast path against the dense reference implementation.
    Diagnose(DiagnoseArgs),
    /// Write the design matrices of a named scenario to a directory.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct ShapeArgs {
    /// Polynomial degree (growth-curve).
    #[arg(long)]
    degree: Option<usize>,
    /// Factor levels `a,b` (two-way).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    levels: Option<Vec<usize>>,
    /// Tested effect (two-way).
    #[arg(long, default_value = "interaction")]
    effect: TwoWayEffect,
}

impl ShapeArgs {
    fn build(&self, kind: ScenarioKind, groups: &[usize], p: usize) -> gmanova::Result<DesignSpec> {
        let sc = match kind {
            ScenarioKind::OneWay => scenarios::one_way_manova(groups, p)?,
            ScenarioKind::Parallelism => scenarios::profile_parallelism(groups, p)?,
            ScenarioKind::GrowthCurve => {
                let degree = self
                    .degree
                    .ok_or_else(|| Error::Config("growth-curve needs --degree".into()))?;
                scenarios::growth_curve(groups, p, degree)?
            }
            ScenarioKind::TwoWay => {
                let levels = self
                    .levels
                    .as_ref()
                    .ok_or_else(|| Error::Config("two-way needs --levels a,b".into()))?;
                scenarios::two_way_manova(levels[0], levels[1], groups, p, self.effect)?
            }
        };
        Ok(sc.design)
    }
}

#[derive(Args)]
struct TestArgs {
    /// Grouped CSV: group label, then p numeric columns.
    #[arg(long)]
    data: PathBuf,
    /// Named scenario; group sizes are taken from the data.
    #[arg(long, required_unless_present = "design")]
    scenario: Option<ScenarioKind>,
    /// Design manifest (JSON); takes precedence over --scenario.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// The data file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Attach plug-in assumption diagnostics to the report.
    #[arg(long)]
    diagnostics: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    shape: ShapeArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Summary path; overrides `output` in the config, stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replication whose draw is used for the data-level checks.
    #[arg(long, default_value_t = 0)]
    replication: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    name: ScenarioKind,
    /// Group sizes (cell sizes, row-major, for two-way).
    #[arg(long, value_delimiter = ',', required = true)]
    groups: Vec<usize>,
    #[arg(long)]
    p: usize,
    /// Output directory for A.csv, B.csv, L.csv, R.csv and manifest.json.
    #[arg(long)]
    emit: PathBuf,
    #[command(flatten)]
    shape: ShapeArgs,
}

#[derive(Serialize)]
struct TestOutput<'a> {
    data: String,
    design: String,
    groups: &'a [String],
    group_sizes: &'a [usize],
    #[serde(flatten)]
    report: &'a TestReport,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    experiment: &'a str,
    #[serde(flatten)]
    summary: &'a SimulationSummary,
    diagnostics: &'a DiagnosticsReport,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Input(_)
        | Error::Design(_)
        | Error::Config(_)
        | Error::File { .. }
        | Error::DegenerateGroup { .. }
        | Error::EstimatorUndefined { .. } => EXIT_INPUT,
        Error::NoBalancingSolution { .. } => EXIT_NO_BALANCING,
        Error::Replication { source, .. } => exit_code(source),
        Error::Internal(_) => EXIT_FAILURE,
    }
}

fn emit<T: Serialize>(body: &T, hash: &str, out: Option<&Path>) -> gmanova::Result<()> {
    match out {
        Some(path) => io::write_report(body, hash, path),
        None => {
            println!("{}", io::render_report(body, hash)?);
            Ok(())
        }
    }
}

fn run_test(args: &TestArgs) -> gmanova::Result<u8> {
    let sample = io::load_dataset(&args.data, args.header)?;
    let (design, design_name, mut fingerprint) = match (&args.scenario, &args.design) {
        (_, Some(manifest)) => {
            let design = io::load_design(manifest)?;
            let bytes = fs::read(manifest).map_err(|e| Error::File {
                path: manifest.clone(),
                message: e.to_string(),
            })?;
            (design, manifest.display().to_string(), bytes)
        }
        (Some(kind), None) => {
            if *kind == ScenarioKind::OneWay {
                io::check_min_group_size(&sample, 4)?;
            }
            let design = args.shape.build(*kind, sample.group_sizes(), sample.p())?;
            let tag = format!(
                "{kind};{:?};{:?};{:?}",
                args.shape.degree, args.shape.levels, args.shape.effect
            );
            (design, kind.to_string(), tag.into_bytes())
        }
        (None, None) => return Err(Error::Config("give --scenario or --design".into())),
    };
    io::check_data_against_design(&sample, &design, &args.data)?;
    fingerprint.extend(format!(";alpha={};header={}\n", args.alpha, args.header).bytes());
    fingerprint.extend(fs::read(&args.data).unwrap_or_default());
    let hash = io::sha256_hex(&fingerprint);

    let plan = TestPlan::new(design)?;
    let report = if args.diagnostics {
        plan.run_with_diagnostics(sample.x(), args.alpha)?
    } else {
        plan.run(sample.x(), args.alpha)?
    };
    let labels: Vec<String> = match sample.labels() {
        Some(l) => l.to_vec(),
        None => (0..sample.group_sizes().len()).map(|g| g.to_string()).collect(),
    };
    let output = TestOutput {
        data: args.data.display().to_string(),
        design: design_name,
        groups: &labels,
        group_sizes: sample.group_sizes(),
        report: &report,
    };
    emit(&output, &hash, args.out.as_deref())?;
    if report.degenerate {
        eprintln!("warning: estimated null variance is not positive; test flagged as degenerate");
        return Ok(EXIT_DEGENERATE);
    }
    Ok(0)
}

fn thread_count() -> gmanova::Result<usize> {
    match std::env::var("GMANOVA_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("GMANOVA_THREADS must be a non-negative integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

/// Semantic config errors found while building get the config file's name.
fn build_experiment(path: &Path) -> gmanova::Result<(ExperimentConfig, io::Experiment, String)> {
    let (config, hash) = ExperimentConfig::load(path)?;
    let experiment = config.build().map_err(|e| match e {
        Error::Config(message) => Error::File {
            path: path.to_path_buf(),
            message: format!("config error: {message}"),
        },
        other => other,
    })?;
    Ok((config, experiment, hash))
}

fn run_simulate(args: &SimulateArgs) -> gmanova::Result<u8> {
    let threads = thread_count()?;
    let (config, experiment, hash) = build_experiment(&args.config)?;
    let mc = &experiment.monte_carlo;
    let summary = mc.run(experiment.reps, threads)?;
    let diagnostics = mc.diagnostics()?;
    let output = SimulateOutput {
        experiment: &experiment.name,
        summary: &summary,
        diagnostics: &diagnostics,
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(|p| config.base_dir.join(p)));
    emit(&output, &hash, out.as_deref())?;
    Ok(0)
}

fn run_diagnose(args: &DiagnoseArgs) -> gmanova::Result<u8> {
    let (_, experiment, _) = build_experiment(&args.config)?;
    let outcomes = cross_check(&experiment.monte_carlo, args.replication)?;
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>12}  {:>9}  result", "check", "discrepancy", "tolerance");
    for o in &outcomes {
        println!(
            "{:<width$}  {:>12.3e}  {:>9.0e}  {}",
            o.name,
            o.discrepancy,
            o.tolerance,
            if o.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}

fn run_scenario(args: &ScenarioArgs) -> gmanova::Result<u8> {
    let design = args.shape.build(args.name, &args.groups, args.p)?;
    let manifest = io::emit_design(&design, &args.emit)?;
    println!("{}", manifest.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Scenario(a) => run_scenario(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
