//! `bwpromise` command-line driver.
//!
//! Exit status: 0 on success, 1 when an input fails validation (including
//! bad arguments), 2 when a valid input fails at run time. Errors are written
//! to stderr as one JSON object per line.

use std::path::PathBuf;
use std::process::ExitCode;

use bwpromise::io::{emit_reports, parse_ledger, write_outputs, Scenario};
use bwpromise::{AccountingConfig, Grouping, Topology, TopologyError};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "bwpromise",
    version,
    about = "Bandwidth promise scheduler and transfer simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write timeline.csv, completions.json,
    /// ledger.json and reports.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the route between two nodes.
    Route {
        topology: PathBuf,
        src: String,
        dst: String,
    },
    /// Check a scenario and everything it references without running it.
    Validate { scenario: PathBuf },
    /// Recompute systematic reports from a ledger file.
    Report {
        ledger: PathBuf,
        #[arg(long, value_enum)]
        group: Group,
        /// Overrides the threshold stored in the ledger.
        #[arg(long)]
        threshold: Option<f64>,
        /// Overrides the minimum sample count stored in the ledger.
        #[arg(long)]
        min_samples: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Group {
    Route,
    Segment,
    Site,
}

impl From<Group> for Grouping {
    fn from(g: Group) -> Self {
        match g {
            Group::Route => Grouping::Route,
            Group::Segment => Grouping::Segment,
            Group::Site => Grouping::Site,
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            Failure::Validation(m) => ("validation", m, 1),
            Failure::Runtime(m) => ("runtime", m, 2),
        };
        eprintln!("{}", json!({ "level": "error", "kind": kind, "message": message }));
        ExitCode::from(code)
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(scenario: &PathBuf, out: &PathBuf) -> Result<(), Failure> {
    let scenario = Scenario::load(scenario).map_err(invalid)?;
    let output = scenario.run().map_err(runtime)?;
    let reports = write_outputs(out, &output, scenario.accounting).map_err(runtime)?;
    let flagged = reports.segment.iter().filter(|r| r.flagged).count();
    log::info!(
        "{} completions, {} promises accounted, {} segments flagged",
        output.completions.len(),
        reports.promises.len(),
        flagged
    );
    println!("{}", out.display());
    Ok(())
}

fn route(topology: &PathBuf, src: &str, dst: &str) -> Result<(), Failure> {
    let topology = Topology::load(topology).map_err(invalid)?;
    match topology.shortest_path(src, dst) {
        Ok(path) => {
            println!("{path}");
            Ok(())
        }
        Err(e @ TopologyError::NoRoute(..)) => Err(runtime(e)),
        Err(e) => Err(invalid(e)),
    }
}

fn validate(scenario: &PathBuf) -> Result<(), Failure> {
    let s = Scenario::load(scenario).map_err(invalid)?;
    println!(
        "ok: {} nodes, {} links, {} sites, {} trace records",
        s.topology.node_count(),
        s.topology.links().len(),
        s.sites.len(),
        s.trace.len()
    );
    Ok(())
}

fn report(ledger: &PathBuf, group: Group, threshold: Option<f64>, min_samples: Option<usize>) -> Result<(), Failure> {
    let ledger = parse_ledger(ledger).map_err(invalid)?;
    let accounting = AccountingConfig {
        deficit_threshold: threshold.unwrap_or(ledger.accounting.deficit_threshold),
        min_samples: min_samples.unwrap_or(ledger.accounting.min_samples),
    };
    accounting.validate().map_err(invalid)?;
    let reports = emit_reports(&ledger, accounting);
    let doc = json!({
        "format_version": reports.format_version,
        "accounting": reports.accounting,
        "grouping": Grouping::from(group),
        "reports": reports.group(group.into()),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { scenario, out } => run(&scenario, &out),
        Command::Route { topology, src, dst } => route(&topology, &src, &dst),
        Command::Validate { scenario } => validate(&scenario),
        Command::Report {
            ledger,
            group,
            threshold,
            min_samples,
        } => report(&ledger, group, threshold, min_samples),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Validation(e.render().to_string().trim_end().to_owned()).report(),
    };
    // a panic is reported as a runtime error below, not as a backtrace
    std::panic::set_hook(Box::new(|_| {}));
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => f.report(),
        Err(_) => Failure::Runtime("internal error".into()).report(),
    }
}
