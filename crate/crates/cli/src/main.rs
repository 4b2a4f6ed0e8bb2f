use clap::Parser;

fn main() {
    let cli = uavfml_cli::Cli::parse();
    if let Err(e) = uavfml_cli::run(&cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
