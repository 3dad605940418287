//! `haze`: dataset synthesis, decomposition, dehazing, evaluation and
//! PM2.5 calibration from the command line.

mod decompose;
mod eval;
mod pm25;
mod synth;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use haze_core::Error;
use serde::Serialize;

/// Exit status when a check ran but did not pass.
const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_DOMAIN: u8 = 3;

#[derive(Parser)]
#[command(name = "haze", version, about = "Haze synthesis and decomposition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render hazy images at several relative visibilities from clear/depth pairs.
    Synthesize(synth::Args),
    /// Recover range, airlight and visibility from hazy/clear pairs.
    Decompose(decompose::Args),
    /// Depth error table (AbsRel, SqRel, RMS, RMSlog, d1, d2, d3).
    EvalDepth(eval::DepthArgs),
    /// RMSE, MAE and MAPE of scalar predictions read from CSV.
    EvalScalar(eval::ScalarArgs),
    /// Fit a polynomial visibility-to-PM2.5 model to CSV samples.
    FitPm25(pm25::FitArgs),
    /// Evaluate a fitted PM2.5 model.
    PredictPm25(pm25::PredictArgs),
    /// Remove haze given range, airlight and visibility.
    Dehaze(tools::DehazeArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(tools::GradcheckArgs),
}

pub(crate) type CliResult<T = u8> = Result<T, Error>;

pub(crate) fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_DOMAIN
    }
}

/// Writes a JSON report when a path was given.
pub(crate) fn write_report<T: Serialize>(path: Option<&PathBuf>, value: &T) -> CliResult<()> {
    match path {
        Some(p) => haze_core::io::write_json(p, value),
        None => Ok(()),
    }
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect()
}

pub(crate) fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    parse_list(s)?
        .try_into()
        .map_err(|_| format!("expected r,g,b, got '{s}'"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synthesize(a) => synth::run(a),
        Command::Decompose(a) => decompose::run(a),
        Command::EvalDepth(a) => eval::run_depth(a),
        Command::EvalScalar(a) => eval::run_scalar(a),
        Command::FitPm25(a) => pm25::run_fit(a),
        Command::PredictPm25(a) => pm25::run_predict(a),
        Command::Dehaze(a) => tools::run_dehaze(a),
        Command::Gradcheck(a) => tools::run_gradcheck(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            match &e {
                Error::Unpaired(offenders) => {
                    eprintln!("error: unpaired inputs");
                    for o in offenders {
                        eprintln!("  {o}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_triples() {
        assert_eq!(parse_rgb("0.1, 0.2,0.3"), Ok([0.1, 0.2, 0.3]));
        assert!(parse_rgb("0.1,0.2").is_err());
        assert!(parse_rgb("a,b,c").is_err());
    }

    #[test]
    fn error_families_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Unpaired(vec![])), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Degenerate("x".into())), EXIT_DOMAIN);
        assert_eq!(exit_code(&Error::SingularFit("x".into())), EXIT_DOMAIN);
    }
}
