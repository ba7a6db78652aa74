use std::process::ExitCode;

fn main() -> ExitCode {
    lpreduce_cli::cli::main_entry()
}
