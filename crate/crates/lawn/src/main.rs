use std::process::ExitCode;

fn main() -> ExitCode {
    lawn::cli::main_with(std::env::args().collect())
}
