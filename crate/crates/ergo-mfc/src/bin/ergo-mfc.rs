use clap::Parser;

fn main() {
    let cli = ergo_mfc::cli::Cli::parse();
    if let Err(e) = ergo_mfc::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
