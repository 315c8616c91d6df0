//! `agcosim` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 plant or
//! controller fault (for `sweep`: every candidate failed).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agcosim::calibration::calibration_demo;
use agcosim::cosim::{self, Criterion, Scenario, Termination, Trace, Wiring};
use agcosim::dse::{self, Axis, DesignSpace, Expansion, MinMeanMaxSet, SearchConfig};
use agcosim::{report, scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agcosim", version, about = "Co-simulation and design-space exploration for agricultural ground vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one co-simulation and write trace.csv, summary.txt and path.svg.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the scenario's design space and write results.csv plus plots.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses every core, 1 runs sequentially.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// `max-xte=METRES` or `feed-success`.
        #[arg(long, default_value = "max-xte=0.3")]
        criterion: String,
        /// Re-sweep the speed axis at half its step within BAND m/s of the
        /// viability boundary.
        #[arg(long, value_name = "BAND")]
        refine: Option<f64>,
    },
    /// Search the best tag spacing for every tyre compression and radius
    /// estimate method over the min-mean-max environment set.
    FeedingStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = ExpansionArg::Ofat)]
        expansion: ExpansionArg,
    },
    /// Replay simulated tag passes and estimate the loaded rear wheel radius.
    CalibrateDemo {
        #[command(flatten)]
        common: Common,
    },
    /// Run with the EKF in the loop and report belief error against truth.
    EkfDemo {
        #[command(flatten)]
        common: Common,
        /// Disable pole, sidewall and tag updates.
        #[arg(long)]
        dead_reckoning: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpansionArg {
    Ofat,
    Full,
}

enum Failure {
    Config(String),
    Fault(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Fault(msg)) => {
            eprintln!("fault: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { common } => simulate(&common),
        Command::Sweep { common, workers, criterion, refine } => sweep(&common, workers, &criterion, refine),
        Command::FeedingStudy { common, workers, expansion } => feeding_study(&common, workers, expansion),
        Command::CalibrateDemo { common } => calibrate(&common),
        Command::EkfDemo { common, dead_reckoning } => ekf_demo(&common, dead_reckoning),
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let mut s = scenario::load_file(&common.scenario)?;
    if let Some(seed) = common.seed {
        s.cosim.seed = seed;
    }
    fs::create_dir_all(&common.out).map_err(|e| format!("cannot create {}: {e}", common.out.display()))?;
    Ok(s)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_trace(dir: &Path, s: &Scenario, trace: &Trace) -> Result<(), Failure> {
    write(dir, "trace.csv", &report::trace_csv(trace))?;
    write(dir, "path.svg", &report::path_svg(trace, &s.resolve().route))
}

fn fault_of(trace: &Trace) -> Result<(), Failure> {
    match &trace.termination {
        Termination::Fault(msg) => Err(Failure::Fault(msg.clone())),
        _ => Ok(()),
    }
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let s = load(common)?;
    let trace = run(&s)?;
    write_trace(&common.out, &s, &trace)?;
    write(&common.out, "summary.txt", &report::summary_text(&trace))?;
    fault_of(&trace)
}

fn run(s: &Scenario) -> Result<Trace, Failure> {
    cosim::run(s).map_err(|e| match e {
        cosim::CoSimError::InvalidScenario(_) => Failure::Config(e.to_string()),
        _ => Failure::Fault(e.to_string()),
    })
}

fn parse_criterion(raw: &str) -> Result<Criterion, Failure> {
    let (name, value) = raw.split_once('=').map_or((raw, None), |(n, v)| (n, Some(v)));
    match (name.trim(), value) {
        ("max-xte", Some(v)) => match v.trim().parse::<f64>() {
            Ok(b) if b > 0.0 => Ok(Criterion::MaxXte(b)),
            _ => Err(Failure::Config(format!("max-xte needs a positive bound in metres, got '{v}'"))),
        },
        ("feed-success", None) => Ok(Criterion::FeedSuccess),
        _ => Err(Failure::Config(format!("unknown criterion '{raw}'; expected max-xte=METRES or feed-success"))),
    }
}

const SPEED_AXIS: &str = "speed";

fn sweep(common: &Common, workers: usize, criterion: &str, refine: Option<f64>) -> Result<(), Failure> {
    let criterion = parse_criterion(criterion)?;
    let s = load(common)?;
    let space = s
        .design_space
        .clone()
        .ok_or_else(|| Failure::Config("scenario has no [design] section".into()))?;
    let route = s.resolve().route;
    let threshold = match criterion {
        Criterion::MaxXte(b) => Some(b),
        Criterion::FeedSuccess => None,
    };
    let write_set = |suffix: &str, results: &[dse::CandidateResult]| -> Result<Vec<dse::BoundaryGroup>, Failure> {
        write(&common.out, &format!("results{suffix}.csv"), &report::results_csv(results))?;
        write(&common.out, &format!("paths{suffix}.svg"), &report::sweep_paths_svg(results, &route))?;
        let groups = dse::classify_boundary(results, SPEED_AXIS);
        if !groups.is_empty() {
            write(&common.out, &format!("boundary{suffix}.txt"), &report::boundary_text(&groups, SPEED_AXIS))?;
            write(&common.out, &format!("boundary{suffix}.svg"), &report::boundary_svg(results, SPEED_AXIS, threshold))?;
        }
        Ok(groups)
    };

    let results = dse::sweep(&space, &s, &criterion, workers)?;
    all_failed(&results)?;
    let groups = write_set("", &results)?;
    let Some(band) = refine else { return Ok(()) };
    if band.is_nan() || band <= 0.0 {
        return Err(Failure::Config(format!("--refine needs a positive band, got {band}")));
    }
    let Some(axis) = space.axes.iter().find(|a| a.name == SPEED_AXIS) else {
        return Err(Failure::Config(format!("--refine needs a '{SPEED_AXIS}' range axis")));
    };
    let Some(refined) = dse::refine_axis(axis, &groups, band) else {
        eprintln!("no viability boundary to refine");
        return Ok(());
    };
    let axes: Vec<Axis> = space
        .axes
        .iter()
        .map(|a| if a.name == SPEED_AXIS { refined.clone() } else { a.clone() })
        .collect();
    let results = dse::sweep(&DesignSpace { axes }, &s, &criterion, workers)?;
    all_failed(&results)?;
    write_set("_refined", &results).map(|_| ())
}

fn all_failed(results: &[dse::CandidateResult]) -> Result<(), Failure> {
    if !results.is_empty() && results.iter().all(|r| r.cost.is_nan()) {
        let first = results[0].reason.clone().unwrap_or_default();
        return Err(Failure::Fault(format!("every candidate failed; first: {first}")));
    }
    Ok(())
}

fn feeding_study(common: &Common, workers: usize, expansion: ExpansionArg) -> Result<(), Failure> {
    let s = load(common)?;
    if s.feeding.is_none() {
        return Err(Failure::Config("scenario has no [feeding] section".into()));
    }
    let expansion = match expansion {
        ExpansionArg::Ofat => Expansion::OneFactorAtATime,
        ExpansionArg::Full => Expansion::FullFactorial,
    };
    let results = dse::feeding_study(
        &s,
        &MinMeanMaxSet::default(),
        &dse::system_configs(),
        expansion,
        &SearchConfig::default(),
        workers,
    )?;
    write(&common.out, "feeding.csv", &report::feeding_csv(&results))?;
    write(&common.out, "boxplot.svg", &report::boxplot_svg(&results))?;
    let warnings: String = results
        .iter()
        .flat_map(|r| r.warnings.iter().map(move |w| format!("{} {}: {w}\n", r.config.compression, r.config.method.name())))
        .collect();
    write(&common.out, "warnings.txt", &warnings)
}

fn calibrate(common: &Common) -> Result<(), Failure> {
    let s = load(common)?;
    let demo = calibration_demo(&s)?;
    write(&common.out, "calibration.txt", &report::calibration_text(&demo))
}

fn ekf_demo(common: &Common, dead_reckoning: bool) -> Result<(), Failure> {
    let mut s = load(common)?;
    s.localization.wiring = Wiring::Ekf;
    if dead_reckoning {
        s.localization.use_poles = false;
        s.localization.use_sidewall = false;
        s.localization.use_rfid = false;
    }
    let trace = run(&s)?;
    write_trace(&common.out, &s, &trace)?;
    write(&common.out, "ekf.txt", &report::ekf_text(&trace, dead_reckoning))?;
    fault_of(&trace)
}
