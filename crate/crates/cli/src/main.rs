use std::io::Write;

use clap::Parser;
use rsd_cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSD_LOG", "warn")).init();
    let cli = Cli::parse();
    let arguments: Vec<String> = std::env::args().skip(1).collect();
    let run = execute(&cli, arguments);

    if let Some(report) = &run.report {
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        if cli.command.common().out.is_none() {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            // a closed pipe is not worth a panic
            let _ = lock.write_all(report.to_json().as_bytes());
        }
    }
    for line in &run.summary {
        eprintln!("{line}");
    }
    if let Some(msg) = &run.error {
        eprintln!("error: {msg}");
    }
    std::process::exit(run.kind.code());
}
