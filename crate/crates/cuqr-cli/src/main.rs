//! Command-line front end: data generation/ingestion, fitting, calibration,
//! prediction and evaluation, with deterministic file outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cuqr::core_types::{load_csv, BaseModel, Dataset, RunConfig};
use cuqr::evaluation::{adaptivity_audit, evaluate, g_sweep, generate, SyntheticSpec};
use cuqr::partition::kmeans_fit;
use cuqr::pipeline::{fit_pipeline, ModelArtifact};
use cuqr::{Error, Method};

#[derive(Parser)]
#[command(name = "cuqr", about = "Adaptive conformal prediction intervals with subgroup-level coverage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a heteroscedastic synthetic dataset as CSV plus a sidecar JSON.
    Synth(SynthArgs),
    /// Fit, partition and calibrate a predictor; persist it as model JSON.
    Fit(FitArgs),
    /// Emit prediction intervals for an input CSV.
    Predict(PredictArgs),
    /// Evaluate a fitted model on its held-out test split.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long = "noise-base", default_value_t = 0.5)]
    noise_base: f64,
    #[arg(long = "noise-slope", default_value_t = 2.0)]
    noise_slope: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, default_value = "cuqr")]
    method: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Number of relevance subgroups G.
    #[arg(long, default_value_t = 10)]
    groups: usize,
    /// Quantile grid size K.
    #[arg(long, default_value_t = 20)]
    grid: usize,
    #[arg(long = "pac-confidence", default_value_t = 0.9)]
    pac_confidence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n-min", default_value_t = 30)]
    n_min: usize,
    #[arg(long = "base-model", default_value = "gbt")]
    base_model: String,
    #[arg(long = "density-floor", default_value_t = 1e-6)]
    density_floor: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV; defaults to the path recorded at fit time.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long = "audit-groups")]
    audit_groups: Option<usize>,
    #[arg(long = "audit-seed", default_value_t = 1234)]
    audit_seed: u64,
    /// Comma-separated subgroup counts for a G-sweep, e.g. 1,5,10,20.
    #[arg(long = "sweep-groups")]
    sweep_groups: Option<String>,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CUQR_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e);
            ExitCode::FAILURE
        }
    }
}

/// Write atomically: stage in the target directory, rename into place, so a
/// failed command leaves no partial output file.
fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn format_float(v: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(v).to_string()
}

fn dataset_to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(&ds.column_names().join(","));
    out.push(',');
    out.push_str(ds.response_name());
    out.push('\n');
    for i in 0..ds.n() {
        let row: Vec<String> = ds.row(i).iter().map(|&v| format_float(v)).collect();
        out.push_str(&row.join(","));
        out.push(',');
        out.push_str(&format_float(ds.response()[i]));
        out.push('\n');
    }
    out
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SyntheticSpec {
        n: args.n,
        d: args.d,
        noise_base: args.noise_base,
        noise_slope: args.noise_slope,
        seed: args.seed,
    };
    let ds = generate(&spec)?;
    write_file(&args.output, dataset_to_csv(&ds).as_bytes())?;
    let sidecar = args.output.with_extension("json");
    write_file(&sidecar, serde_json::to_string_pretty(&spec)?.as_bytes())?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let method = Method::parse(&args.method)?;
    let base_model = match args.base_model.as_str() {
        "gbt" => BaseModel::Gbt,
        "knn" => BaseModel::Knn,
        other => {
            return Err(Error::InvalidConfig(format!("unknown base model `{other}` (expected gbt|knn)")))
        }
    };
    let cfg = RunConfig {
        alpha: args.alpha,
        groups: args.groups,
        grid_size: args.grid,
        pac_confidence: args.pac_confidence,
        seed: args.seed,
        n_min: args.n_min,
        base_model,
        density_floor: args.density_floor,
    };
    cfg.validate()?;
    let ds = load_csv(&args.data, &args.response)?;
    let mut fitted = fit_pipeline(&ds, &cfg, method)?;
    fitted.artifact.data_path = Some(args.data.to_string_lossy().into_owned());
    write_file(&args.output, serde_json::to_string_pretty(&fitted.artifact)?.as_bytes())?;
    Ok(())
}

/// Reorder input columns to the training schema; every training feature
/// column must be present.
fn rows_in_schema(ds: &Dataset, artifact: &ModelArtifact) -> Result<Vec<Vec<f64>>, Error> {
    let positions: Vec<usize> = artifact
        .column_names
        .iter()
        .map(|name| {
            ds.column_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::SchemaMismatch(format!("input is missing column `{name}`")))
        })
        .collect::<Result<_, _>>()?;
    Ok((0..ds.n()).map(|i| positions.iter().map(|&j| ds.row(i)[j]).collect()).collect())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let artifact = ModelArtifact::load(&args.model)?;
    let ds = load_csv(&args.input, &artifact.response_name)
        .or_else(|e| match e {
            // The response column is optional at prediction time.
            Error::MissingColumn(_) => load_csv_featureless(&args.input, &artifact),
            other => Err(other),
        })?;
    let rows = rows_in_schema(&ds, &artifact)?;

    let mut out = String::from("row_id,y_hat,lo,hi,subgroup,n_g,lambda,length_std\n");
    for (i, row) in rows.iter().enumerate() {
        let z = artifact.scaler.transform_row(row)?;
        let r = artifact.predictor.predict(&z)?;
        let center = artifact.scaler.inverse_response((r.interval.lo + r.interval.hi) / 2.0);
        let lo = artifact.scaler.inverse_response(r.interval.lo);
        let hi = artifact.scaler.inverse_response(r.interval.hi);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i,
            format_float(center),
            format_float(lo),
            format_float(hi),
            r.subgroup,
            r.guarantee_note.n_g,
            format_float(r.guarantee_note.lambda),
            format_float(r.length()),
        ));
    }
    write_file(&args.output, out.as_bytes())?;
    Ok(())
}

/// Load a prediction-only CSV that lacks the response column by synthesizing
/// a zero response.
fn load_csv_featureless(path: &Path, artifact: &ModelArtifact) -> Result<Dataset, Error> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut features = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.trim()
                    .parse()
                    .map_err(|_| Error::NonNumericCell { row: i, col: headers[j].clone() })
            })
            .collect::<Result<_, _>>()?;
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::EmptyFile);
    }
    let n = features.len();
    Dataset::new(features, vec![0.0; n], headers, artifact.response_name.clone())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let artifact = ModelArtifact::load(&args.model)?;
    let data_path = match (&args.data, &artifact.data_path) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(Error::InvalidConfig(
                "model records no data path; pass --data".into(),
            ))
        }
    };
    let ds = load_csv(&data_path, &artifact.response_name)?;
    // Re-standardize with the frozen scaler, not refit statistics.
    let rows = rows_in_schema(&ds, &artifact)?;
    let features: Vec<Vec<f64>> =
        rows.iter().map(|r| artifact.scaler.transform_row(r)).collect::<Result<_, _>>()?;
    let response: Vec<f64> =
        ds.response().iter().map(|&y| artifact.scaler.transform_response(y)).collect();
    let std_ds = Dataset::new(
        features,
        response,
        artifact.column_names.clone(),
        artifact.response_name.clone(),
    )?;

    std::fs::create_dir_all(&args.output)?;
    let report =
        evaluate(&artifact.predictor, &std_ds, &artifact.split.test_idx, &artifact.config)?;
    write_file(
        &args.output.join("report.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;

    let mut csv_out =
        String::from("g,n_test_g,coverage_g,mean_length_g,mean_abs_error_g,error_rank\n");
    for m in &report.per_subgroup {
        csv_out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.g,
            m.n_test_g,
            format_float(m.coverage_g),
            format_float(m.mean_length_g),
            format_float(m.mean_abs_error_g),
            m.error_rank
        ));
    }
    write_file(&args.output.join("subgroups.csv"), csv_out.as_bytes())?;

    if let Some(audit_g) = args.audit_groups {
        let (test_xs, _) = std_ds.select(&artifact.split.test_idx);
        let audit_partition = kmeans_fit(&test_xs, audit_g, args.audit_seed)?;
        let table = adaptivity_audit(
            &artifact.predictor,
            &std_ds,
            &artifact.split.test_idx,
            &audit_partition,
        )?;
        write_file(
            &args.output.join("audit.json"),
            serde_json::to_string_pretty(&table)?.as_bytes(),
        )?;
        let mut audit_csv = String::from("g,n_test_g,mean_length_g,mean_abs_error_g\n");
        for row in &table.rows {
            audit_csv.push_str(&format!(
                "{},{},{},{}\n",
                row.g,
                row.n_test_g,
                format_float(row.mean_length_g),
                format_float(row.mean_abs_error_g)
            ));
        }
        write_file(&args.output.join("audit.csv"), audit_csv.as_bytes())?;
    }

    if let Some(sweep) = &args.sweep_groups {
        let g_values: Vec<usize> = sweep
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad sweep group count `{s}`")))
            })
            .collect::<Result<_, _>>()?;
        let reports = g_sweep(&ds, &artifact.config, artifact.method, &g_values)?;
        for (g, report) in g_values.iter().zip(&reports) {
            write_file(
                &args.output.join(format!("report_g{g}.json")),
                serde_json::to_string_pretty(report)?.as_bytes(),
            )?;
        }
    }
    Ok(())
}
