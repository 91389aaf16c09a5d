use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::Parser;
use rescue::monitor::{self, MonitorConfig, MonitorError};
use rescue_core::EndpointUri;

/// Watches the master and restarts it when it stops answering.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Restart the master with --rescue.
    #[arg(long)]
    rescue: bool,
    /// Defaults to $ROS_MASTER_URI, then http://localhost:11311/.
    #[arg(long)]
    master_uri: Option<String>,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    poll_interval_ms: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    poll_timeout_ms: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    threshold: u32,
    /// Whitespace-separated argv replacing the default restart command.
    #[arg(long)]
    restart_cmd: Option<String>,
    /// Passed to the restarted master.
    #[arg(long)]
    checkpoint_path: Option<PathBuf>,
    /// Master binary for the default restart command. Defaults to the
    /// rescue_master next to this executable.
    #[arg(long)]
    master_bin: Option<PathBuf>,
    #[arg(long)]
    max_restarts: Option<u32>,
}

fn sibling_master() -> PathBuf {
    std::env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(|d| d.join("rescue_master")))
        .unwrap_or_else(|| PathBuf::from("rescue_master"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let raw = cli
        .master_uri
        .or_else(|| std::env::var("ROS_MASTER_URI").ok())
        .unwrap_or_else(|| "http://localhost:11311/".into());
    let master_uri = match EndpointUri::new(raw.as_str()) {
        Ok(u) => u,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let restart_command: Vec<OsString> = match cli.restart_cmd {
        Some(cmd) => cmd.split_whitespace().map(OsString::from).collect(),
        None => monitor::default_restart_command(
            &cli.master_bin.unwrap_or_else(sibling_master),
            cli.rescue,
            master_uri.port(),
            cli.checkpoint_path.as_deref(),
        ),
    };
    let config = MonitorConfig {
        poll_interval: Duration::from_millis(cli.poll_interval_ms),
        poll_timeout: Duration::from_millis(cli.poll_timeout_ms),
        failure_threshold: cli.threshold,
        max_restarts: cli.max_restarts,
        ..MonitorConfig::new(master_uri, restart_command)
    };
    println!(
        "monitoring {} every {:?}, restart after {} missed polls",
        config.master_uri, config.poll_interval, config.failure_threshold
    );
    let stop = AtomicBool::new(false);
    match monitor::run_monitor(&config, &stop, &mut |event| println!("{event}")) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e @ MonitorError::RestartsExhausted { .. }) | Err(e @ MonitorError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
