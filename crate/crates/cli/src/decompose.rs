use std::path::{Path, PathBuf};

use haze_core::decompose::{
    anchors_from_range_field, decompose, write_decompose_artifacts, DecomposeMode, DecomposeSummary, KnownParams,
    SolverConfig,
};
use haze_core::geometry::depth_to_range;
use haze_core::io::{self, read_json, DEFAULT_DEPTH_SCALE, SCHEMA_VERSION};
use haze_core::scattering::{DatasetManifest, DEFAULT_EPSILON};
use haze_core::{CameraIntrinsics, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::{exit_code, CliResult};

#[derive(clap::Args)]
pub struct Args {
    /// Hazy image of a single pair.
    #[arg(long, requires = "clear", conflicts_with = "manifest")]
    hazy: Option<PathBuf>,
    /// Clear image of a single pair.
    #[arg(long, requires = "hazy")]
    clear: Option<PathBuf>,
    /// JSON with the known quantities of a single pair: A, V, anchors, d_ref.
    /// Entries the chosen mode estimates are ignored.
    #[arg(long, requires = "hazy")]
    known: Option<PathBuf>,
    /// Sample id used for output names of a single pair (default: hazy file stem).
    #[arg(long)]
    id: Option<String>,
    /// Manifest written by `synthesize`; every record is decomposed.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Anchors per image drawn from the source depth in batch mode.
    #[arg(long, default_value_t = 16)]
    anchors: usize,
    /// Codes per metre for depth PNGs without a scale sidecar.
    #[arg(long, default_value_t = DEFAULT_DEPTH_SCALE)]
    depth_scale: f64,
    #[arg(long, default_value = "full")]
    mode: DecomposeMode,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Reference distance for the visibility scan; overrides the manifest's.
    #[arg(long)]
    d_ref: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Job {
    id: String,
    hazy: PathBuf,
    clear: PathBuf,
    known: Known,
    truth: Option<Truth>,
}

enum Known {
    File(Option<PathBuf>),
    Sample {
        airlight: [f64; 3],
        visibility: f64,
        d_ref: f64,
        depth: PathBuf,
        intrinsics: CameraIntrinsics,
    },
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Truth {
    #[serde(rename = "V")]
    visibility: f64,
    #[serde(rename = "A")]
    airlight: [f64; 3],
}

#[derive(Serialize)]
struct Outcome {
    id: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<DecomposeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<Truth>,
    #[serde(skip)]
    code: u8,
}

#[derive(Serialize)]
struct BatchSummary {
    schema: &'static str,
    mode: DecomposeMode,
    epsilon: f64,
    seed: u64,
    samples: usize,
    failures: usize,
    /// Percent, over successful samples with known truth.
    mape_visibility: Option<f64>,
    mae_airlight: Option<f64>,
    records: Vec<Outcome>,
}

fn keep_for_mode(mut known: KnownParams, mode: DecomposeMode) -> KnownParams {
    if mode != DecomposeMode::FixAV {
        known.visibility = None;
    }
    if mode == DecomposeMode::Full {
        known.airlight = None;
    }
    known
}

fn known_params(job: &Job, args: &Args) -> CliResult<KnownParams> {
    let mut known = match &job.known {
        Known::File(None) => KnownParams::default(),
        Known::File(Some(p)) => read_json(p)?,
        Known::Sample {
            airlight,
            visibility,
            d_ref,
            depth,
            intrinsics,
        } => {
            let anchors = if args.mode == DecomposeMode::FixAV {
                Vec::new()
            } else {
                let depth = io::load_depth(depth, args.depth_scale)?;
                anchors_from_range_field(&depth_to_range(&depth, intrinsics)?, args.anchors)
            };
            KnownParams {
                airlight: Some(*airlight),
                visibility: Some(*visibility),
                anchors,
                d_ref: Some(*d_ref),
            }
        }
    };
    if args.d_ref.is_some() {
        known.d_ref = args.d_ref;
    }
    Ok(keep_for_mode(known, args.mode))
}

fn solve(job: &Job, args: &Args, config: &SolverConfig) -> CliResult<DecomposeSummary> {
    let hazy = io::load_raster(&job.hazy)?;
    let clear = io::load_raster(&job.clear)?;
    let known = known_params(job, args)?;
    let result = decompose(&hazy, &clear, args.epsilon, args.mode, &known, config)?;
    write_decompose_artifacts(&args.out, &job.id, &result, args.epsilon)?;
    Ok(result.summary(&job.id, args.epsilon))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn manifest_jobs(path: &Path) -> CliResult<Vec<Job>> {
    let manifest: DatasetManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(manifest
        .records
        .iter()
        .map(|r| Job {
            id: r.meta.id.clone(),
            hazy: resolve(base, &r.hazy),
            clear: r.meta.source_clear.clone(),
            known: Known::Sample {
                airlight: r.meta.airlight,
                visibility: r.meta.v_abs,
                d_ref: r.meta.d_ref,
                depth: r.meta.source_depth.clone(),
                intrinsics: manifest.intrinsics,
            },
            truth: Some(Truth {
                visibility: r.meta.v_abs,
                airlight: r.meta.airlight,
            }),
        })
        .collect())
}

fn summary_line(o: &Outcome) -> String {
    match (&o.result, &o.error) {
        (Some(r), _) => format!(
            "{}  V={:.4}  A=[{:.4}, {:.4}, {:.4}]  converged={}  loss={:.6e}",
            o.id, r.visibility, r.airlight[0], r.airlight[1], r.airlight[2], r.converged, r.final_loss.total
        ),
        (None, Some(e)) => format!("{}  FAILED: {e}", o.id),
        (None, None) => format!("{}  FAILED", o.id),
    }
}

pub fn run(args: Args) -> CliResult {
    let mut config = SolverConfig {
        seed: args.seed,
        ..SolverConfig::default()
    };
    if let Some(n) = args.max_iters {
        config.max_iters = n;
    }
    config.validate()?;

    let jobs = match (&args.manifest, &args.hazy, &args.clear) {
        (Some(m), _, _) => manifest_jobs(m)?,
        (None, Some(h), Some(c)) => vec![Job {
            id: args.id.clone().unwrap_or_else(|| {
                h.file_stem().and_then(|s| s.to_str()).unwrap_or("sample").to_owned()
            }),
            hazy: h.clone(),
            clear: c.clone(),
            known: Known::File(args.known.clone()),
            truth: None,
        }],
        _ => return Err(Error::InvalidInput("give --hazy and --clear, or --manifest".into())),
    };

    // a single pair reports its error directly
    if args.manifest.is_none() {
        let summary = solve(&jobs[0], &args, &config)?;
        println!("{}", summary_line(&outcome(&jobs[0], Ok(summary))));
        return Ok(0);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {} worker(s): {e}", args.jobs)))?;
    let outcomes: Vec<Outcome> =
        pool.install(|| jobs.par_iter().map(|j| outcome(j, solve(j, &args, &config))).collect());

    for o in &outcomes {
        println!("{}", summary_line(o));
    }
    let scored: Vec<(&DecomposeSummary, &Truth)> = outcomes
        .iter()
        .filter_map(|o| Some((o.result.as_ref()?, o.truth.as_ref()?)))
        .collect();
    let (mape_visibility, mae_airlight) = if scored.is_empty() {
        (None, None)
    } else {
        let n = scored.len() as f64;
        let mape = scored
            .iter()
            .map(|(r, t)| (r.visibility - t.visibility).abs() / t.visibility)
            .sum::<f64>()
            / n
            * 100.0;
        let mae = scored
            .iter()
            .map(|(r, t)| (0..3).map(|c| (r.airlight[c] - t.airlight[c]).abs()).sum::<f64>() / 3.0)
            .sum::<f64>()
            / n;
        (Some(mape), Some(mae))
    };
    let failures = outcomes.iter().filter(|o| !o.ok).count();
    println!(
        "{} sample(s), {failures} failed{}",
        outcomes.len(),
        match (mape_visibility, mae_airlight) {
            (Some(m), Some(a)) => format!(", MAPE(V) {m:.3}%, MAE(A) {a:.4}"),
            _ => String::new(),
        }
    );
    let code = outcomes.iter().map(|o| o.code).max().unwrap_or(0);
    let summary = BatchSummary {
        schema: SCHEMA_VERSION,
        mode: args.mode,
        epsilon: args.epsilon,
        seed: args.seed,
        samples: outcomes.len(),
        failures,
        mape_visibility,
        mae_airlight,
        records: outcomes,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    io::write_json(&args.out.join("summary.json"), &summary)?;
    Ok(code)
}

fn outcome(job: &Job, r: CliResult<DecomposeSummary>) -> Outcome {
    match r {
        Ok(s) => Outcome {
            id: job.id.clone(),
            ok: true,
            error: None,
            result: Some(s),
            truth: job.truth,
            code: 0,
        },
        Err(e) => Outcome {
            id: job.id.clone(),
            ok: false,
            error: Some(e.to_string()),
            result: None,
            truth: job.truth,
            code: exit_code(&e),
        },
    }
}
