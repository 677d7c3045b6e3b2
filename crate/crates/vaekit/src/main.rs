use clap::Parser;

fn main() {
    let cli = vaekit::cli::Cli::parse();
    if let Err(e) = vaekit::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
