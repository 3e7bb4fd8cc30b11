use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sssae::cli::run(std::env::args_os()))
}
