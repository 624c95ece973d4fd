use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = panic::catch_unwind(|| robust_iv_cli::run(std::env::args_os()))
        .unwrap_or(robust_iv_cli::EXIT_INTERNAL);
    ExitCode::from(code as u8)
}
