use clap::Parser;
use ssdiff::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            std::process::exit(2);
        }
    }
}
