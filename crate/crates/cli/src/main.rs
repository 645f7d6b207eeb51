use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = metaself_cli::Cli::parse();
    if let Err(e) = metaself_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(metaself_cli::exit_code(&e));
    }
}
