use clap::Parser;

use ddform::cli::{init_threads, run, Args, EXIT_CONFIG};

fn main() {
    let args = Args::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        std::process::exit(EXIT_CONFIG);
    }
    std::process::exit(run(&args));
}
