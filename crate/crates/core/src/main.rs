use clap::Parser;

use textgroup::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TG_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(Cli::parse()) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
