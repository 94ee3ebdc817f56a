use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAPACON_LOG", "warn")).init();
    let cli = capacon::cli::Cli::parse();
    if let Err(e) = capacon::cli::run(cli) {
        eprintln!("capacon: {e}");
        std::process::exit(e.exit_code());
    }
}
