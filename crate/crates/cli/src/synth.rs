use std::path::PathBuf;

use haze_core::io::{read_json, DEFAULT_DEPTH_SCALE};
use haze_core::scattering::{make_visibility_dataset, AirlightSpec, DatasetConfig, DepthSource, DEFAULT_EPSILON};
use haze_core::CameraIntrinsics;

use crate::CliResult;

#[derive(clap::Args)]
pub struct Args {
    /// Directory of clear RGB images (PNG, JPEG or PFM).
    #[arg(long)]
    clear_dir: PathBuf,
    /// Directory of z-depth maps (16-bit PNG or PFM), paired by file stem.
    #[arg(long)]
    depth_dir: PathBuf,
    /// JSON file with fx, fy, cx, cy.
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Relative visibilities in (0, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.8,1")]
    scales: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Reference distance in metres; defaults to each scene's maximum range.
    #[arg(long)]
    d_ref: Option<f64>,
    /// `random`, a family name (white, blue-grey, yellow, grey, sepia) or r,g,b.
    #[arg(long, default_value = "random")]
    airlight: String,
    /// Codes per metre for depth PNGs without a scale sidecar.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    /// Also write 8-bit PNG previews.
    #[arg(long)]
    png: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: Args) -> CliResult {
    let intrinsics: CameraIntrinsics = read_json(&args.intrinsics)?;
    let config = DatasetConfig {
        clear_dir: args.clear_dir,
        depth: DepthSource {
            dir: args.depth_dir,
            fallback_scale: args.depth_scale,
        },
        intrinsics,
        scales: args.scales,
        epsilon: args.epsilon,
        airlight: args.airlight.parse::<AirlightSpec>()?,
        d_ref: args.d_ref,
        seed: args.seed,
        out_dir: args.out.clone(),
        png_preview: args.png,
    };
    let manifest = make_visibility_dataset(&config)?;
    for (scale, count) in manifest.counts_per_scale() {
        println!("V_rel {scale:<6} {count} image(s)");
    }
    println!(
        "{} sample(s) written, manifest {}",
        manifest.records.len(),
        args.out.join("manifest.json").display()
    );
    Ok(0)
}
