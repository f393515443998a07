use std::process::ExitCode;

use pairprobe_cli::{run, Outcome};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args_os()) {
        Ok(Outcome::Printed) => ExitCode::SUCCESS,
        Ok(Outcome::Summary(s)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&s).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_record());
            ExitCode::from(e.exit_code())
        }
    }
}
