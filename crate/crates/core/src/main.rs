use clap::Parser;
use quadsim::cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QUAD_SIM_LOG", "warn")).init();
    std::process::exit(execute(Cli::parse()));
}
