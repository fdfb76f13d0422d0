use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(riccati_lab::cli::main_with(std::env::args_os()))
}
