use clap::Parser;

fn main() {
    let cli = mavenrec::cli::Cli::parse();
    if let Err(err) = mavenrec::cli::run(cli) {
        eprintln!("error: {}", err);
        std::process::exit(1);
    }
}
