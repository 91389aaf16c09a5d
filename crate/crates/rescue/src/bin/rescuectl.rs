use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rescue::harness::bench::{self, BENCH_SIZES};
use rescue::harness::scenario::{self, CaseId, ScenarioEnv};
use rescue::harness::sim::{SimNode, SimNodeSpec};
use rescue::harness::inspect_checkpoint;

/// Crash scenarios, recovery benchmark, checkpoint inspection and simulated
/// nodes.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct HarnessArgs {
    /// Master binary. Defaults to the rescue_master next to this executable.
    #[arg(long)]
    master_bin: Option<PathBuf>,
    /// Scratch directory for checkpoints. Defaults to a fresh temp dir.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run crash scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Measure recovery time against node count.
    Bench {
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',', default_values_t = BENCH_SIZES)]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        harness: HarnessArgs,
    },
    /// Validate a checkpoint file and print its counts.
    Inspect { file: PathBuf },
    /// Simulated nodes.
    Sim {
        #[command(subcommand)]
        action: SimAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// case0, case1, case2, case3 or all.
    Run {
        case: String,
        #[command(flatten)]
        harness: HarnessArgs,
    },
}

#[derive(Subcommand)]
enum SimAction {
    /// Start the nodes listed in a YAML file and keep them running.
    Spawn {
        #[arg(long)]
        spec: PathBuf,
        /// Defaults to $ROS_MASTER_URI, then http://localhost:11311/.
        #[arg(long)]
        master_uri: Option<String>,
    },
}

fn env_for(args: HarnessArgs) -> anyhow::Result<(ScenarioEnv, Option<tempfile::TempDir>)> {
    let master_bin = match args.master_bin {
        Some(p) => p,
        None => std::env::current_exe()?
            .parent()
            .context("executable has no directory")?
            .join("rescue_master"),
    };
    if !master_bin.exists() {
        bail!("master binary {} not found; pass --master-bin", master_bin.display());
    }
    let (workdir, guard) = match args.workdir {
        Some(dir) => (dir, None),
        None => {
            let tmp = tempfile::tempdir()?;
            (tmp.path().to_path_buf(), Some(tmp))
        }
    };
    Ok((ScenarioEnv { master_bin, workdir }, guard))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Scenario {
            action: ScenarioAction::Run { case, harness },
        } => {
            let cases = if case == "all" {
                CaseId::ALL.to_vec()
            } else {
                vec![case.parse::<CaseId>().map_err(anyhow::Error::msg)?]
            };
            let (env, _guard) = env_for(harness)?;
            let mut ok = true;
            for case in cases {
                let report = scenario::run_scenario(case, &env);
                println!("{report}");
                ok &= report.passed();
            }
            Ok(ok)
        }
        Command::Bench {
            nodes,
            trials,
            csv,
            harness,
        } => {
            let (env, _guard) = env_for(harness)?;
            let mut rows = Vec::new();
            for n in nodes {
                let row = bench::bench_recovery(&env, n, trials as usize).map_err(anyhow::Error::msg)?;
                eprintln!(
                    "n={:<3} recover={:.4}s start={:.4}s",
                    row.n_nodes, row.time_to_recover_s, row.total_start_s
                );
                rows.push(row);
            }
            let text = bench::csv(&rows);
            match csv {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("write {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::Inspect { file } => {
            println!("{}", inspect_checkpoint(&file)?);
            Ok(true)
        }
        Command::Sim {
            action: SimAction::Spawn { spec, master_uri },
        } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("read {}", spec.display()))?;
            let specs: Vec<SimNodeSpec> =
                serde_yaml::from_str(&text).with_context(|| format!("parse {}", spec.display()))?;
            let master_uri = master_uri
                .or_else(|| std::env::var("ROS_MASTER_URI").ok())
                .unwrap_or_else(|| "http://localhost:11311/".into());
            let mut nodes = Vec::new();
            for s in specs {
                let node = SimNode::spawn(s, &master_uri)?;
                println!("{} at {}", node.name(), node.api());
                nodes.push(node);
            }
            loop {
                std::thread::park();
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
