//! Writes a synthetic monthly predictor panel in the CSV layout the
//! `backtest` and `factors` commands read.
//!
//! Usage: `cargo run --release --example synthetic_panel -- OUT.csv [SEED]`

use std::path::PathBuf;
use std::process::ExitCode;

use deepfactor::dataflow;
use deepfactor::simulation::{monthly_panel, MonthlyPanelSpec};

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(out) = args.next().map(PathBuf::from) else {
        eprintln!("usage: synthetic_panel OUT.csv [SEED]");
        return ExitCode::from(2);
    };
    let mut spec = MonthlyPanelSpec::default();
    if let Some(s) = args.next() {
        match s.parse() {
            Ok(seed) => spec.seed = seed,
            Err(_) => {
                eprintln!("seed must be an unsigned integer, got `{s}`");
                return ExitCode::from(2);
            }
        }
    }
    let result = monthly_panel(&spec).and_then(|panel| dataflow::write_csv(&panel, &out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
