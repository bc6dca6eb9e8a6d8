use std::process::ExitCode;

fn main() -> ExitCode {
    hut::cli::run(std::env::args_os())
}
