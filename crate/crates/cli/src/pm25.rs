use std::path::PathBuf;

use haze_core::io::{read_json, write_json, SCHEMA_VERSION};
use haze_core::pm25::{fit_pm25, predict_pm25, stratified_fit, BinWarning, Pm25Model, Pm25Sample, Prediction};
use haze_core::Error;
use serde::{Deserialize, Serialize};

use crate::eval::read_csv;
use crate::{write_report, CliResult};

#[derive(clap::Args)]
pub struct FitArgs {
    /// CSV with header columns `visibility`, `pm25` and optionally
    /// `relative_humidity` (fraction in [0, 1]).
    #[arg(long)]
    csv: PathBuf,
    /// Polynomial order.
    #[arg(long)]
    order: usize,
    /// Relative-humidity bin edges, e.g. `0,0.5,0.8,1`; one model per bin.
    #[arg(long, value_delimiter = ',')]
    rh_bins: Vec<f64>,
    /// Where to write the fitted model(s) as JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct SampleRow {
    visibility: f64,
    pm25: f64,
    #[serde(default)]
    relative_humidity: Option<f64>,
}

/// On-disk model file: one unbinned model, or one per humidity bin.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    models: Vec<Pm25Model>,
    #[serde(default)]
    warnings: Vec<BinWarning>,
}

fn print_model(m: &Pm25Model) {
    match m.humidity_bin {
        Some(b) => println!("RH [{}, {}{}", b.lo, b.hi, if b.closed_above { "]" } else { ")" }),
        None => println!("all samples"),
    }
    for (i, c) in m.coefficients.iter().enumerate() {
        println!("  c{i:<3} {c:.10e}");
    }
    let d = &m.diagnostics;
    let mape = d.mape.map_or("n/a".to_owned(), |v| format!("{v:.4}%"));
    println!("  n={}  RMSE {:.4}  MAE {:.4}  MAPE {mape}", d.samples, d.rmse, d.mae);
}

pub fn run_fit(args: FitArgs) -> CliResult {
    let rows: Vec<SampleRow> = read_csv(&args.csv)?;
    let samples: Vec<Pm25Sample> = rows
        .iter()
        .map(|r| Pm25Sample {
            visibility: r.visibility,
            pm25: r.pm25,
            relative_humidity: r.relative_humidity.unwrap_or(0.0),
        })
        .collect();
    let file = match args.rh_bins.as_slice() {
        [] => ModelFile {
            schema: SCHEMA_VERSION.to_owned(),
            models: vec![fit_pm25(&samples, args.order)?],
            warnings: Vec::new(),
        },
        edges => {
            if rows.iter().any(|r| r.relative_humidity.is_none()) {
                return Err(Error::InvalidInput(
                    "--rh-bins needs a relative_humidity value on every row".into(),
                ));
            }
            let fit = stratified_fit(&samples, edges, args.order)?;
            ModelFile {
                schema: SCHEMA_VERSION.to_owned(),
                models: fit.models,
                warnings: fit.warnings,
            }
        }
    };
    for m in &file.models {
        print_model(m);
    }
    for w in &file.warnings {
        eprintln!("warning: RH [{}, {}): {}", w.bin.lo, w.bin.hi, w.message);
    }
    write_json(&args.out, &file)?;
    Ok(0)
}

#[derive(clap::Args)]
pub struct PredictArgs {
    /// Model file written by `fit-pm25`.
    #[arg(long)]
    model: PathBuf,
    /// Relative visibilities in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    visibility: Vec<f64>,
    /// Relative humidity selecting the bin of a stratified model.
    #[arg(long)]
    rh: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct PredictReport {
    schema: &'static str,
    predictions: Vec<PredictRow>,
}

#[derive(Serialize)]
struct PredictRow {
    visibility: f64,
    #[serde(flatten)]
    prediction: Prediction,
}

pub fn run_predict(args: PredictArgs) -> CliResult {
    let file: ModelFile = read_json(&args.model)?;
    let model = match (file.models.as_slice(), args.rh) {
        ([], _) => return Err(Error::InvalidInput(format!("{} holds no model", args.model.display()))),
        ([only], None) => only,
        (_, None) => return Err(Error::InvalidInput("stratified model: give --rh to pick a bin".into())),
        (models, Some(rh)) => models
            .iter()
            .find(|m| m.humidity_bin.is_none_or(|b| b.contains(rh)))
            .ok_or_else(|| Error::Domain(format!("no model covers relative humidity {rh}")))?,
    };
    let mut rows = Vec::new();
    for &v in &args.visibility {
        let p = predict_pm25(model, v)?;
        println!("{v:<8} {:.4}{}", p.pm25, if p.clamped { "  (clamped from negative)" } else { "" });
        rows.push(PredictRow {
            visibility: v,
            prediction: p,
        });
    }
    write_report(
        args.report.as_ref(),
        &PredictReport {
            schema: SCHEMA_VERSION,
            predictions: rows,
        },
    )?;
    Ok(0)
}
