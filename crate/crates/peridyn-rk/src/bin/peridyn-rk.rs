use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let threads = std::env::var("PERIDYN_THREADS").ok();
    let code = peridyn_rk::cli::main_with(&args, threads.as_deref());
    ExitCode::from(code as u8)
}
