use clap::Parser;
use matnorm_cli::{configure_threads, run, Cli, EXIT_INPUT};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match configure_threads().and_then(|()| run(cli)) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INPUT
        }
    };
    std::process::exit(code);
}
