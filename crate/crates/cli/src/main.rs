//! `gs2pc`: convert a 3D Gaussian Splatting scene into a dense coloured point
//! cloud, optionally with an oriented surface cloud for Poisson meshing.

mod args;

use std::process::ExitCode;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = match args::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(args::ArgsError::Clap(e)) => e.exit(),
        Err(args::ArgsError::Config(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    init_logging(cli.verbose);

    let config = match cli.to_config() {
        Ok(config) => config,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match gs2pc::pipeline::run(&config) {
        Ok(report) => {
            if cli.stats_json {
                match serde_json::to_string_pretty(&report) {
                    Ok(json) => println!("{json}"),
                    Err(e) => {
                        eprintln!("error: could not serialize statistics: {e}");
                        return ExitCode::from(EXIT_RUNTIME);
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_RUNTIME })
        }
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}
