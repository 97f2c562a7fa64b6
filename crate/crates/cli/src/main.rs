use clap::Parser;

fn main() {
    let cli = dads_cli::Cli::parse();
    let outcome = dads_cli::run(cli);
    match serde_json::to_string_pretty(&outcome.manifest) {
        Ok(text) => println!("{text}"),
        Err(e) => eprintln!("failed to render manifest: {e}"),
    }
    for note in &outcome.manifest.notes {
        eprintln!("{note}");
    }
    std::process::exit(outcome.status.code());
}
