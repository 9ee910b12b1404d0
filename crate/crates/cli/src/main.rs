use clap::Parser;

fn main() {
    let cli = mhae_cli::Cli::parse();
    if let Err(e) = mhae_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
