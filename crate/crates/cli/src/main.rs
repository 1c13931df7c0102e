use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use fracwos_cli::{error_json, execute, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary is JSON");
            // A closed pipe downstream is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
