use std::process::ExitCode;

fn main() -> ExitCode {
    lamp_harness::cli::main_with_args(std::env::args_os())
}
