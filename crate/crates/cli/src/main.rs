use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(coopguide_cli::app::main_with(std::env::args_os()) as u8)
}
