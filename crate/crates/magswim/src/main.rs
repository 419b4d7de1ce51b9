use clap::Parser;
use magswim::cli::{error_kind, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let payload = serde_json::json!({
            "error": e.to_string(),
            "kind": error_kind(&e),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
