use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use haze_core::io::{self, DEFAULT_DEPTH_SCALE, SCHEMA_VERSION};
use haze_core::metrics::{eval_depth, eval_scalar, Crop, DepthEvalConfig, DepthEvalReport, ScalarErrors};
use haze_core::Error;
use serde::{Deserialize, Serialize};

use crate::{write_report, CliResult};

#[derive(clap::Args)]
pub struct DepthArgs {
    /// Predicted depth: a PFM / 16-bit PNG file, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depth, same layout as --pred. Directories pair by file stem.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    min_depth: f64,
    #[arg(long, default_value_t = 80.0)]
    max_depth: f64,
    #[arg(long)]
    median_scaling: bool,
    /// Evaluation window `top,bottom,left,right` (half-open); default full image.
    #[arg(long)]
    crop: Option<Crop>,
    /// Codes per metre for depth PNGs without a scale sidecar.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct DepthRow {
    id: String,
    #[serde(flatten)]
    report: DepthEvalReport,
}

#[derive(Serialize)]
struct DepthTable {
    schema: &'static str,
    config: DepthEvalConfig,
    images: Vec<DepthRow>,
    /// Pixel-weighted over all images.
    overall: DepthEvalReport,
}

fn depth_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })? {
        let p = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if p.is_file() && (ext == "pfm" || ext == "png") {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_owned();
            out.insert(stem, p);
        }
    }
    Ok(out)
}

fn pairs(pred: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    match (pred.is_dir(), gt.is_dir()) {
        (false, false) => {
            let id = gt.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_owned();
            Ok(vec![(id, pred.to_path_buf(), gt.to_path_buf())])
        }
        (true, true) => {
            let p = depth_files(pred)?;
            let g = depth_files(gt)?;
            let mut missing: Vec<String> = g
                .keys()
                .filter(|k| !p.contains_key(*k))
                .map(|k| format!("{} (no prediction)", g[k].display()))
                .collect();
            missing.extend(
                p.keys()
                    .filter(|k| !g.contains_key(*k))
                    .map(|k| format!("{} (no ground truth)", p[k].display())),
            );
            if !missing.is_empty() {
                return Err(Error::Unpaired(missing));
            }
            if g.is_empty() {
                return Err(Error::InvalidInput(format!("no depth maps in {}", gt.display())));
            }
            Ok(g.into_iter().map(|(k, gp)| (k.clone(), p[&k].clone(), gp)).collect())
        }
        _ => Err(Error::InvalidInput("--pred and --gt must both be files or both be directories".into())),
    }
}

fn print_row(id: &str, r: &DepthEvalReport) {
    let cols: Vec<String> = r.columns().iter().map(|v| format!("{v:>8.4}")).collect();
    println!("{id:<24}{}", cols.join(""));
}

pub fn run_depth(args: DepthArgs) -> CliResult {
    let config = DepthEvalConfig {
        min_depth: args.min_depth,
        max_depth: args.max_depth,
        median_scaling: args.median_scaling,
        crop: args.crop,
    };
    let mut rows = Vec::new();
    for (id, pred, gt) in pairs(&args.pred, &args.gt)? {
        let p = io::load_depth(&pred, args.depth_scale)?;
        let g = io::load_depth(&gt, args.depth_scale)?;
        rows.push(DepthRow {
            report: eval_depth(&p, &g, &config)?,
            id,
        });
    }
    let reports: Vec<DepthEvalReport> = rows.iter().map(|r| r.report).collect();
    let overall = DepthEvalReport::pooled(&reports).ok_or(Error::NoValidPixels)?;

    let header: String = DepthEvalReport::HEADER.iter().map(|h| format!("{h:>8}")).collect();
    println!("{:<24}{header}", "image");
    for r in &rows {
        print_row(&r.id, &r.report);
    }
    if rows.len() > 1 {
        print_row("all", &overall);
    }
    write_report(
        args.report.as_ref(),
        &DepthTable {
            schema: SCHEMA_VERSION,
            config,
            images: rows,
            overall,
        },
    )?;
    Ok(0)
}

#[derive(clap::Args)]
pub struct ScalarArgs {
    /// CSV with header columns `pred` and `gt`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ScalarRow {
    pred: f64,
    gt: f64,
}

#[derive(Serialize)]
struct ScalarReport {
    schema: &'static str,
    samples: usize,
    #[serde(flatten)]
    errors: ScalarErrors,
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn run_scalar(args: ScalarArgs) -> CliResult {
    let rows: Vec<ScalarRow> = read_csv(&args.csv)?;
    let preds: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let gts: Vec<f64> = rows.iter().map(|r| r.gt).collect();
    let errors = eval_scalar(&preds, &gts)?;
    println!("samples {}", rows.len());
    println!("RMSE    {:.6}", errors.rmse);
    println!("MAE     {:.6}", errors.mae);
    println!("MAPE    {:.4}%", errors.mape);
    write_report(
        args.report.as_ref(),
        &ScalarReport {
            schema: SCHEMA_VERSION,
            samples: rows.len(),
            errors,
        },
    )?;
    Ok(0)
}
