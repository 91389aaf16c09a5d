use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rescue::endpoint::{self, MasterConfig};

/// Registration master with optional checkpointing and crash recovery.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Checkpoint every change and recover from the last checkpoint on start.
    #[arg(long)]
    rescue: bool,
    #[arg(long, default_value_t = endpoint::DEFAULT_PORT, value_parser = clap::value_parser!(u16).range(1..))]
    port: u16,
    /// Defaults to ~/.ros/log/latest-chkpt.yaml.
    #[arg(long)]
    checkpoint_path: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    /// Host name placed in the advertised URI.
    #[arg(long, default_value = "localhost")]
    advertise_host: String,
    /// Answer injectCrash calls. Testing only.
    #[arg(long, hide = true)]
    fault_injection: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(checkpoint_path) = cli.checkpoint_path.or_else(endpoint::default_checkpoint_path) else {
        eprintln!("HOME is not set; pass --checkpoint-path");
        return ExitCode::FAILURE;
    };
    let config = MasterConfig {
        bind_host: cli.bind,
        advertise_host: cli.advertise_host,
        port: cli.port,
        rescue: cli.rescue,
        fault_injection: cli.fault_injection,
        ..MasterConfig::new(checkpoint_path)
    };
    let handle = match endpoint::serve(&config) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    {
        let mut out = std::io::stdout().lock();
        for line in &handle.startup_lines {
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out, "master listening at {}", handle.uri());
        let _ = out.flush();
    }
    loop {
        std::thread::park();
    }
}
