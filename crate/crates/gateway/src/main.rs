use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    viewnav_gateway::cli::run(viewnav_gateway::cli::Cli::parse())
}
