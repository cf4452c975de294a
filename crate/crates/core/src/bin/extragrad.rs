use std::process::ExitCode;

fn main() -> ExitCode {
    extragrad::cli::main_with(std::env::args_os())
}
