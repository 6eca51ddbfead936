use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TT_TODA_LOG", "warn")).init();
    let cli = tt_toda::cli::Cli::parse();
    std::process::exit(tt_toda::cli::run(cli));
}
