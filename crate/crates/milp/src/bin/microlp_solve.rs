//! Solves an LP file with the microlp crate and writes a solution file.
//!
//! Usage: microlp-solve <model.lp> <solution.sol>

use std::path::Path;
use std::process::ExitCode;

use sfm_milp::backend::run_protocol;
use sfm_milp::MipLimits;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 3 {
        eprintln!("usage: microlp-solve <model.lp> <solution.sol>");
        return ExitCode::from(2);
    }
    match run_protocol(Path::new(&args[1]), Path::new(&args[2]), MipLimits::default()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("microlp-solve: {e}");
            ExitCode::FAILURE
        }
    }
}
