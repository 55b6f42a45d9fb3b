use clap::Parser;
use ntk_lab::cli::{run, CliConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = CliConfig::parse();
    std::process::exit(run(&cli));
}
