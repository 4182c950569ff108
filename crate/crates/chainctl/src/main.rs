//! Command-line front end: scenario runner plus direct solver access.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chainctl::scenario::{self, RunOptions, RunReport};
use chainctl::{n_chain, three_level, Error};

/// Analytic optimal control of population transfer through decaying chains.
#[derive(Parser)]
#[command(name = "chainctl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Directory artifacts are written into.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Seed for randomized verification searches.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Integrator tolerance; the CHAINCTL_TOL environment variable overrides
    /// the default and this flag overrides both.
    #[arg(long)]
    tol: Option<f64>,
    /// Emit a machine-readable JSON summary on stdout instead of text lines.
    #[arg(long)]
    json_summary: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the three-level optimal control problem.
    ThreeLevel {
        /// Decay rate of the intermediate level.
        #[arg(long)]
        k: f64,
        /// Amplitude bound on the Stokes coupling.
        #[arg(long)]
        a: f64,
        /// Control horizon.
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1001)]
        samples: usize,
        /// Write the solution document here.
        #[arg(long)]
        solution_out: Option<PathBuf>,
        /// Write the reconstructed pulse CSV here.
        #[arg(long)]
        pulse_out: Option<PathBuf>,
        /// Write the time-rescaled (both channels bounded) schedule here.
        #[arg(long)]
        rescaled_out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the four-level optimal control problem.
    FourLevel {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1001)]
        samples: usize,
        #[arg(long)]
        solution_out: Option<PathBuf>,
        #[arg(long)]
        pulse_out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Build adiabatic-limit (dark-state tracking) pulses.
    Stirap {
        #[arg(long)]
        k: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        t: f64,
        /// Target mixing angle in radians (pi/2 = full transfer).
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
        beta: f64,
        /// Stokes phase for superposition targets (carried as metadata).
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long, default_value_t = 2001)]
        samples: usize,
        /// Output CSV for the schedule.
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Decide controllability of a coupling-graph JSON file.
    Topology {
        graph: PathBuf,
        /// Write the verdict document here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run a named oracle verification suite.
    Verify {
        /// three-level-optimality | three-level-stationarity |
        /// four-level-optimality | stokes-pinning | chain-bound | all
        suite: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Write the report document here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(scenario::exit_code_for(&err) as u8)
        }
    }
}

fn run_options(common: &CommonOpts) -> RunOptions {
    let env_tol = std::env::var("CHAINCTL_TOL")
        .ok()
        .and_then(|s| s.parse::<f64>().ok());
    RunOptions {
        out_dir: common.out_dir.clone(),
        seed: common.seed,
        tol: common.tol.or(env_tol).unwrap_or(1e-9),
        json_summary: common.json_summary,
    }
}

fn print_report(report: &RunReport, opts: &RunOptions) {
    if opts.json_summary {
        println!(
            "{}",
            serde_json::to_string(report).expect("serializable report")
        );
    } else {
        for line in &report.results {
            println!("{line}");
        }
        for artifact in &report.artifacts {
            println!("wrote {}", artifact.display());
        }
    }
}

fn dispatch(cli: Cli) -> chainctl::Result<i32> {
    match cli.command {
        Command::Run { scenario, common } => {
            let opts = run_options(&common);
            let report = scenario::run_scenario(&scenario, &opts)?;
            print_report(&report, &opts);
            Ok(report.exit_code)
        }
        Command::ThreeLevel {
            k,
            a,
            t,
            samples,
            solution_out,
            pulse_out,
            rescaled_out,
            common,
        } => {
            let opts = run_options(&common);
            let doc = serde_json::json!({
                "version": 1, "kind": "three-level", "k": k, "a": a, "t": t,
                "samples": samples,
                "solution_json": solution_out,
                "pulse_csv": pulse_out,
                "rescaled_csv": rescaled_out,
            });
            let report = scenario::run_scenario_str(&doc.to_string(), &opts)?;
            print_report(&report, &opts);
            Ok(report.exit_code)
        }
        Command::FourLevel {
            k,
            a,
            t,
            samples,
            solution_out,
            pulse_out,
            common,
        } => {
            let opts = run_options(&common);
            let doc = serde_json::json!({
                "version": 1, "kind": "four-level", "k": k, "a": a, "t": t,
                "samples": samples,
                "solution_json": solution_out,
                "pulse_csv": pulse_out,
            });
            let report = scenario::run_scenario_str(&doc.to_string(), &opts)?;
            print_report(&report, &opts);
            Ok(report.exit_code)
        }
        Command::Stirap {
            k,
            a,
            t,
            beta,
            phi,
            samples,
            out,
            common,
        } => {
            let opts = run_options(&common);
            let sched = three_level::stirap_limit_pulses_with(
                k,
                a,
                t,
                three_level::StirapOptions {
                    beta,
                    phi,
                    n_samples: samples,
                    ..Default::default()
                },
            )?;
            let csv = scenario::schedule_csv(&sched);
            let path = opts.out_dir.join(&out);
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&path, csv)?;
            let report = RunReport {
                exit_code: 0,
                results: vec![format!(
                    "stirap k={k} A={a} T={t} beta={beta} phi={phi}: {} samples",
                    sched.grid().len()
                )],
                artifacts: vec![path],
            };
            print_report(&report, &opts);
            Ok(0)
        }
        Command::Topology { graph, out, common } => {
            let opts = run_options(&common);
            let raw = std::fs::read_to_string(&graph)?;
            let parsed: GraphDoc = serde_json::from_str(&raw)?;
            if parsed.version != scenario::SCHEMA_VERSION {
                return Err(Error::Contract(format!(
                    "unsupported graph version {}",
                    parsed.version
                )));
            }
            let doc = serde_json::json!({
                "version": 1, "kind": "topology",
                "graph": parsed.graph,
                "output_json": out,
            });
            let report = scenario::run_scenario_str(&doc.to_string(), &opts)?;
            print_report(&report, &opts);
            Ok(report.exit_code)
        }
        Command::Verify {
            suite,
            trials,
            out,
            common,
        } => {
            let opts = run_options(&common);
            let doc = serde_json::json!({
                "version": 1, "kind": "verify",
                "suite": suite, "trials": trials,
                "output_json": out,
            });
            let report = scenario::run_scenario_str(&doc.to_string(), &opts)?;
            print_report(&report, &opts);
            Ok(report.exit_code)
        }
    }
}

/// On-disk graph file: a versioned wrapper around the coupling graph.
#[derive(serde::Deserialize)]
struct GraphDoc {
    version: u32,
    #[serde(flatten)]
    graph: n_chain::CouplingGraph,
}
