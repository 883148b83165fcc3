use std::process::ExitCode;

fn main() -> ExitCode {
    huge2::cli::main_with(std::env::args_os())
}
