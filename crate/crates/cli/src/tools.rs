use std::path::PathBuf;

use haze_core::decompose::{gradcheck_scene, gradient_check, DecomposeSummary, GradCheckConfig, TotalLossModel};
use haze_core::io::{self, read_json, SCHEMA_VERSION};
use haze_core::scattering::{invert_haze, InvertOptions, DEFAULT_EPSILON, DEFAULT_T_MIN};
use haze_core::{Error, ScatteringParams};
use serde::Serialize;

use crate::{parse_rgb, write_report, CliResult, EXIT_CHECK_FAILED};

#[derive(clap::Args)]
pub struct DehazeArgs {
    #[arg(long)]
    hazy: PathBuf,
    /// Range map in metres (PFM).
    #[arg(long)]
    range: PathBuf,
    /// Parameters file written by `decompose`; supplies A, V and epsilon.
    #[arg(long, conflicts_with_all = ["airlight", "visibility"])]
    params: Option<PathBuf>,
    /// Airlight `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb, requires = "visibility")]
    airlight: Option<[f64; 3]>,
    /// Visibility in metres.
    #[arg(long, requires = "airlight")]
    visibility: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_T_MIN)]
    t_min: f64,
    /// Floor low transmission at t_min instead of failing.
    #[arg(long)]
    clamp: bool,
    /// Output image; `.pfm` keeps full precision, anything else is 8-bit PNG.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_dehaze(args: DehazeArgs) -> CliResult {
    let params = match (&args.params, args.airlight, args.visibility) {
        (Some(p), _, _) => {
            let s: DecomposeSummary = read_json(p)?;
            ScatteringParams::new(s.airlight, s.visibility, s.epsilon)?
        }
        (None, Some(a), Some(v)) => ScatteringParams::new(a, v, args.epsilon)?,
        _ => return Err(Error::InvalidInput("give --params, or --airlight and --visibility".into())),
    };
    let hazy = io::load_raster(&args.hazy)?;
    let range = io::load_scalar_pfm(&args.range)?;
    let out = invert_haze(
        &hazy,
        &range,
        &params,
        InvertOptions {
            t_min: args.t_min,
            clamp_low_transmission: args.clamp,
        },
    )?;
    io::save_raster(&args.out, &out.image)?;
    println!(
        "{}: {} pixel(s) clamped to [0, 1], {} with floored transmission",
        args.out.display(),
        out.clamped_pixels,
        out.floored_pixels
    );
    Ok(0)
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the square test scene (at most 16).
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Range pixels checked, drawn from both branches.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct GradcheckFile<'a> {
    schema: &'static str,
    seed: u64,
    size: usize,
    #[serde(flatten)]
    report: &'a haze_core::decompose::GradCheckReport,
}

pub fn run_gradcheck(args: GradcheckArgs) -> CliResult {
    let scene = gradcheck_scene(args.size, args.size, args.seed)?;
    let cfg = GradCheckConfig {
        tolerance: args.tolerance,
        range_samples: args.samples,
        seed: args.seed,
        ..GradCheckConfig::default()
    };
    let report = gradient_check(&scene, &TotalLossModel, &cfg)?;
    println!("{:<18}{:>14}{:>14}{:>12}", "parameter", "analytic", "numeric", "rel.err");
    for e in &report.entries {
        println!(
            "{:<18}{:>14.6e}{:>14.6e}{:>12.2e}{}",
            e.parameter,
            e.analytic,
            e.numeric,
            e.relative_error,
            if e.identifiable { "" } else { "  (no contrast)" }
        );
    }
    println!(
        "{}: max relative error {:.3e} (tolerance {:.1e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_relative_error,
        report.tolerance
    );
    write_report(
        args.report.as_ref(),
        &GradcheckFile {
            schema: SCHEMA_VERSION,
            seed: args.seed,
            size: args.size,
            report: &report,
        },
    )?;
    Ok(if report.passed { 0 } else { EXIT_CHECK_FAILED })
}
