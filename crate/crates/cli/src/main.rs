use std::process::ExitCode;

fn main() -> ExitCode {
    let seed = std::env::var("LRMC_SEED").ok();
    lrmc_cli::main_with(std::env::args_os(), seed.as_deref())
}
