use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(capfield::cli::main())
}
