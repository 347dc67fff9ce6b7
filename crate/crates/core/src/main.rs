use std::process::ExitCode;

fn main() -> ExitCode {
    netsched::cli::main_with_args(std::env::args_os())
}
