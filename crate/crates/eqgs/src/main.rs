use std::process::ExitCode;

use eqgs::cli::{main_with, thread_cap};

fn main() -> ExitCode {
    if let Some(n) = thread_cap(std::env::var("EQGS_THREADS").ok().as_deref()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let code = main_with(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code as u8)
}
