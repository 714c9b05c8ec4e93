use clap::Parser;
use megt_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let code = run(cli, &mut stdout.lock());
    std::process::exit(code);
}
