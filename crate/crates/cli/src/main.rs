use clap::Parser;

fn main() {
    let cli = shapemorph_cli::Cli::parse();
    if let Err(failure) = shapemorph_cli::run(cli) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
