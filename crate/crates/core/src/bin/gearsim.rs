use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gearsim::report::{self, ReportError};
use gearsim::scenario::{self, Scenario, ScenarioError};
use gearsim::trace::format_trace;

#[derive(Parser)]
#[command(
    name = "gearsim",
    about = "Deterministic QoS policy simulator for multi-tenant block storage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config file (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario's random seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario as configured and emit its reports
    Replay(Common),
    /// Run the scenario once per named policy with identical arrivals
    Compare {
        #[command(flatten)]
        common: Common,
        /// Policy name from the scenario's policies map (repeatable);
        /// defaults to all of them
        #[arg(long)]
        policy: Vec<String>,
    },
    /// Trace statistics and the multiplexing table, no simulation
    Analyze(Common),
    /// Write each synthetic volume's workload as a trace file
    Synth(Common),
}

fn load(common: &Common) -> Result<Scenario, ScenarioError> {
    let mut scenario = scenario::load_scenario(&common.config)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn run_command(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Replay(common) => {
            let scenario = load(common)?;
            let base = scenario::scenario_base_dir(&common.config);
            let bundle = report::replay(&scenario, &base)?;
            let files = report::emit_reports(&bundle, &common.out)?;
            println!("scenario {} seed {}", bundle.scenario_hash, bundle.seed);
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Compare { common, policy } => {
            let scenario = load(common)?;
            let base = scenario::scenario_base_dir(&common.config);
            let bundle = report::compare_policies(&scenario, policy, &base)?;
            let files = report::emit_reports(&bundle, &common.out)?;
            println!(
                "scenario {} seed {} policies {}",
                bundle.scenario_hash,
                bundle.seed,
                bundle
                    .policies
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(",")
            );
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Analyze(common) => {
            let scenario = load(common)?;
            let base = scenario::scenario_base_dir(&common.config);
            let multiplex = report::analyze(&scenario, &base)?;
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Io {
                path: common.out.display().to_string(),
                source: e,
            })?;
            let path = common.out.join("multiplex.csv");
            std::fs::write(&path, report::multiplex_csv(&multiplex)).map_err(|e| {
                CliError::Io {
                    path: path.display().to_string(),
                    source: e,
                }
            })?;
            println!("scenario {} seed {}", scenario.hash(), scenario.seed);
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Synth(common) => {
            let scenario = load(common)?;
            let base = scenario::scenario_base_dir(&common.config);
            std::fs::create_dir_all(&common.out).map_err(|e| CliError::Io {
                path: common.out.display().to_string(),
                source: e,
            })?;
            for (i, vol) in scenario.volumes.iter().enumerate() {
                if !matches!(vol.source, scenario::SourceConfig::Synthetic { .. }) {
                    continue;
                }
                let records = scenario::volume_records(&scenario, i, &base)?;
                let path = common.out.join(format!("{}.trace", vol.id));
                std::fs::write(&path, format_trace(&records)).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                println!("wrote {} ({} records)", path.display(), records.len());
            }
            Ok(())
        }
    }
}

enum CliError {
    Scenario(ScenarioError),
    Report(ReportError),
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Scenario(s) => CliError::Scenario(s),
            other => CliError::Report(other),
        }
    }
}

fn main() -> ExitCode {
    // exit 1 on config/validation problems, 2 on runtime failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    match run_command(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Scenario(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Report(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Io { path, source }) => {
            eprintln!("error: cannot write {path}: {source}");
            ExitCode::from(2)
        }
    }
}
