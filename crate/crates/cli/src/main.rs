//! Command-line front end: fit, cross-validate, training-path selection,
//! scree spectra, and the simulation study, all emitting plot-ready CSV
//! plus a JSON run manifest.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical error, 3 reached the
//! iteration cap without converging (results are still written).

mod manifest;
mod parse;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ordscale::data::{load_ordinal_csv, OrdinalDataMatrix};
use ordscale::scaling::{als_fit, AlsConfig, FitResult, PenaltyConfig};
use ordscale::select::{
    choose_lambda_delta, cross_validate, scree_table, vaf_path, CvResult, ScreeTable,
};
use ordscale::sim::{replicate_study, SimDesign};
use ordscale::Error;

use manifest::{file_digest, RunManifest};
use parse::{parse_grid, parse_lambda_list, parse_monotone_mask};

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ordscale",
    version,
    about = "Penalized optimal scaling (non-linear PCA) for ordinal data"
)]
struct Cli {
    /// Worker threads for folds, grid points, and replications
    /// (default: ORDSCALE_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit quantifications at a fixed lambda and write the scaled data.
    Fit(FitArgs),
    /// K-fold cross-validation of the VAF over a lambda grid.
    Cv(CvArgs),
    /// Training VAF path over a lambda grid with the delta rule.
    Path(PathArgs),
    /// Eigenvalue spectra for several component counts plus linear baseline.
    Scree(ScreeArgs),
    /// Latent-factor simulation study with replicated fits.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Ordinal CSV input file.
    #[arg(long)]
    input: PathBuf,
    /// The file has no header row of variable names.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Components used while fitting the scaling functions.
    #[arg(long)]
    m: usize,
    /// Penalty weight.
    #[arg(long)]
    lambda: f64,
    /// Monotone mask: all, none, or names/globs/indices/ranges.
    #[arg(long, default_value = "none")]
    monotone: String,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    m: usize,
    /// Lambda grid: default, log:<lo>:<hi>:<count>, a comma list, or @file.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    #[arg(long, default_value = "none")]
    monotone: String,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value = "default")]
    grid: String,
    /// Threshold of the delta rule on the training VAF drop.
    #[arg(long, default_value_t = 0.001)]
    delta: f64,
    #[arg(long, default_value = "none")]
    monotone: String,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScreeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Component counts, e.g. 2,3,4.
    #[arg(long)]
    m_list: String,
    /// One lambda per entry of --m-list (comma-separated).
    #[arg(long, conflicts_with = "auto_cv")]
    lambda_list: Option<String>,
    /// Select each m's lambda by cross-validation instead.
    #[arg(long)]
    auto_cv: bool,
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    k_folds: usize,
    #[arg(long, default_value = "none")]
    monotone: String,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sample size per replication.
    #[arg(long)]
    n: usize,
    /// Noise variance tau^2.
    #[arg(long)]
    tau2: f64,
    /// Comma-separated lambda values, e.g. 0,0.1,5,10.
    #[arg(long)]
    lambdas: String,
    /// Replications.
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "none")]
    monotone: String,
    #[arg(long, default_value_t = 1e-7)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

struct CliFailure {
    code: u8,
    message: String,
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Parse { .. } | Error::Validation(_) => EXIT_INPUT,
            Error::Numerical(_) | Error::Infeasible(_) => EXIT_NUMERICAL,
        };
        CliFailure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliFailure {
    fn from(e: std::io::Error) -> Self {
        CliFailure {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

fn input_failure(message: impl Into<String>) -> CliFailure {
    CliFailure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("ORDSCALE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<u8, CliFailure> {
    match command {
        Command::Fit(args) => cmd_fit(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Path(args) => cmd_path(args),
        Command::Scree(args) => cmd_scree(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn load_input(input: &InputArgs) -> Result<(OrdinalDataMatrix, String), CliFailure> {
    let data = load_ordinal_csv(&input.input, !input.no_header)?;
    let digest = file_digest(&input.input)?;
    Ok((data, digest))
}

fn write_csv(
    dir: &Path,
    name: &str,
    manifest: &RunManifest,
    header: &str,
    rows: &[String],
) -> Result<PathBuf, CliFailure> {
    let path = dir.join(name);
    let mut out = String::with_capacity(rows.len() * 32 + 64);
    out.push_str(&manifest.csv_header_line());
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    let mut file = fs::File::create(&path)?;
    file.write_all(out.as_bytes())?;
    Ok(path)
}

fn write_fit_outputs(
    dir: &Path,
    manifest: &RunManifest,
    data: &OrdinalDataMatrix,
    fit: &FitResult<f64>,
) -> Result<(), CliFailure> {
    let mut rows = Vec::new();
    for q in &fit.quantifications {
        let j = q.variable_index;
        for (l, score) in q.theta.iter().enumerate() {
            rows.push(format!(
                "{},{},{},{}",
                data.variable_names()[j],
                data.external_label(j, l + 1),
                score,
                q.monotone
            ));
        }
    }
    write_csv(dir, "quantifications.csv", manifest, "variable,level,score,monotone", &rows)?;

    let rows: Vec<String> = fit
        .final_pca
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(r, v)| format!("{},{}", r + 1, v))
        .collect();
    write_csv(dir, "eigenvalues.csv", manifest, "component,eigenvalue", &rows)?;

    let header = data.variable_names().join(",");
    let rows: Vec<String> = fit
        .scaled
        .values
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_csv(dir, "scaled.csv", manifest, &header, &rows)?;
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<u8, CliFailure> {
    let (data, digest) = load_input(&args.input)?;
    let mask = parse_monotone_mask(&args.monotone, data.variable_names())
        .map_err(input_failure)?;
    let penalty = PenaltyConfig::new(args.lambda, data.level_counts(), mask)?;
    let mut config = AlsConfig::new(args.m)
        .with_epsilon(args.epsilon)
        .with_max_iter(args.max_iter);
    config.seed = args.seed;
    let fit = als_fit(&data, &penalty, &config)?;

    let params = json!({
        "input": args.input.input.display().to_string(),
        "header": !args.input.no_header,
        "m": args.m,
        "lambda": args.lambda,
        "monotone": args.monotone,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("fit", Some(digest), params);
    manifest.converged = Some(fit.converged);
    manifest.iterations = Some(fit.iterations);
    if !fit.converged {
        manifest.warnings.push(format!(
            "reached max_iter = {} without converging (last criterion {})",
            args.max_iter,
            fit.convergence_trace.last().copied().unwrap_or(f64::NAN)
        ));
    }

    fs::create_dir_all(&args.out_dir)?;
    write_fit_outputs(&args.out_dir, &manifest, &data, &fit)?;
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(if fit.converged { 0 } else { EXIT_NOT_CONVERGED })
}

#[derive(Serialize)]
struct CvSummary<'a> {
    manifest: &'a RunManifest,
    best_lambda: f64,
    k_folds: usize,
    failed_cells: Vec<serde_json::Value>,
}

fn cmd_cv(args: CvArgs) -> Result<u8, CliFailure> {
    let (data, digest) = load_input(&args.input)?;
    let mask = parse_monotone_mask(&args.monotone, data.variable_names())
        .map_err(input_failure)?;
    let grid = parse_grid(&args.grid).map_err(input_failure)?;
    let penalty = PenaltyConfig::new(grid[0], data.level_counts(), mask)?;
    let mut config = AlsConfig::new(args.m)
        .with_epsilon(args.epsilon)
        .with_max_iter(args.max_iter);
    config.seed = args.seed;
    let result = cross_validate(&data, &penalty, &config, &grid, args.k_folds, args.seed)?;

    let params = json!({
        "input": args.input.input.display().to_string(),
        "header": !args.input.no_header,
        "m": args.m,
        "grid": grid,
        "k_folds": args.k_folds,
        "monotone": args.monotone,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("cv", Some(digest), params);
    for (fold, g, message) in &result.failures {
        manifest.warnings.push(format!(
            "fold {} at lambda {} failed and was excluded: {message}",
            fold + 1,
            result.lambda_grid[*g]
        ));
    }

    fs::create_dir_all(&args.out_dir)?;
    write_cv_curve(&args.out_dir, &manifest, &result)?;
    let summary = CvSummary {
        manifest: &manifest,
        best_lambda: result.best_lambda,
        k_folds: result.k,
        failed_cells: result
            .failures
            .iter()
            .map(|(fold, g, message)| {
                json!({"fold": fold + 1, "lambda": result.lambda_grid[*g], "message": message})
            })
            .collect(),
    };
    fs::write(
        args.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialize") + "\n",
    )?;
    Ok(0)
}

fn write_cv_curve(
    dir: &Path,
    manifest: &RunManifest,
    result: &CvResult<f64>,
) -> Result<(), CliFailure> {
    let mut rows = Vec::new();
    for fold in 0..result.k {
        for (g, &lambda) in result.lambda_grid.iter().enumerate() {
            rows.push(format!("{},{},{}", fold + 1, lambda, result.fold_vaf[(fold, g)]));
        }
    }
    for (g, &lambda) in result.lambda_grid.iter().enumerate() {
        rows.push(format!("mean,{},{}", lambda, result.mean_vaf[g]));
    }
    write_csv(dir, "cv_curve.csv", manifest, "fold,lambda,vaf", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct PathSummary<'a> {
    manifest: &'a RunManifest,
    delta: f64,
    lambda0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

fn cmd_path(args: PathArgs) -> Result<u8, CliFailure> {
    let (data, digest) = load_input(&args.input)?;
    let mask = parse_monotone_mask(&args.monotone, data.variable_names())
        .map_err(input_failure)?;
    let grid = parse_grid(&args.grid).map_err(input_failure)?;
    let penalty = PenaltyConfig::new(grid[0], data.level_counts(), mask)?;
    let config = AlsConfig::new(args.m)
        .with_epsilon(args.epsilon)
        .with_max_iter(args.max_iter);
    let path = vaf_path(&data, &penalty, &config, &grid)?;
    let selection = choose_lambda_delta(&path, args.delta)?;

    let params = json!({
        "input": args.input.input.display().to_string(),
        "header": !args.input.no_header,
        "m": args.m,
        "grid": grid,
        "delta": args.delta,
        "monotone": args.monotone,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
    });
    let mut manifest = RunManifest::new("path", Some(digest), params);
    for (g, message) in &path.failures {
        manifest.warnings.push(format!(
            "fit at lambda {} failed: {message}",
            path.lambda_grid[*g]
        ));
    }
    if let Some(w) = &selection.warning {
        manifest.warnings.push(w.clone());
    }

    fs::create_dir_all(&args.out_dir)?;
    let rows: Vec<String> = path
        .lambda_grid
        .iter()
        .zip(path.train_vaf.iter())
        .map(|(l, v)| format!("{l},{v}"))
        .collect();
    write_csv(&args.out_dir, "vaf_path.csv", &manifest, "lambda,vaf", &rows)?;
    let summary = PathSummary {
        manifest: &manifest,
        delta: args.delta,
        lambda0: selection.lambda0,
        warning: selection.warning,
    };
    fs::write(
        args.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialize") + "\n",
    )?;
    Ok(0)
}

fn cmd_scree(args: ScreeArgs) -> Result<u8, CliFailure> {
    let (data, digest) = load_input(&args.input)?;
    let mask = parse_monotone_mask(&args.monotone, data.variable_names())
        .map_err(input_failure)?;
    let m_list: Vec<usize> = args
        .m_list
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| input_failure(format!("bad m list '{}'", args.m_list)))?;
    if m_list.is_empty() {
        return Err(input_failure("m list is empty"));
    }

    let mut config = AlsConfig::new(m_list[0])
        .with_epsilon(args.epsilon)
        .with_max_iter(args.max_iter);
    config.seed = args.seed;

    let lambdas: Vec<f64> = if args.auto_cv {
        let grid = parse_grid(&args.grid).map_err(input_failure)?;
        let penalty = PenaltyConfig::new(grid[0], data.level_counts(), mask.clone())?;
        let mut selected = Vec::with_capacity(m_list.len());
        for &m in &m_list {
            let mut cfg = config.clone();
            cfg.m = m;
            let cv = cross_validate(&data, &penalty, &cfg, &grid, args.k_folds, args.seed)?;
            selected.push(cv.best_lambda);
        }
        selected
    } else {
        let spec = args.lambda_list.as_deref().ok_or_else(|| {
            input_failure("either --lambda-list or --auto-cv is required")
        })?;
        let values = parse_lambda_list(spec).map_err(input_failure)?;
        if values.len() != m_list.len() {
            return Err(input_failure(
                "--lambda-list must have one value per entry of --m-list",
            ));
        }
        values
    };

    let settings: Vec<(usize, f64)> = m_list.iter().copied().zip(lambdas.iter().copied()).collect();
    let penalty = PenaltyConfig::new(lambdas[0], data.level_counts(), mask)?;
    let table = scree_table(&data, &settings, &penalty, &config)?;

    let params = json!({
        "input": args.input.input.display().to_string(),
        "header": !args.input.no_header,
        "m_list": m_list,
        "lambda_list": args.lambda_list,
        "auto_cv": args.auto_cv,
        "grid": args.grid,
        "k_folds": args.k_folds,
        "monotone": args.monotone,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "seed": args.seed,
    });
    let mut manifest = RunManifest::new("scree", Some(digest), params);
    if args.auto_cv {
        for (m, lambda) in &settings {
            manifest
                .warnings
                .push(format!("cross-validation selected lambda = {lambda} for m = {m}"));
        }
    }

    fs::create_dir_all(&args.out_dir)?;
    write_scree(&args.out_dir, &manifest, &table)?;
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(0)
}

fn write_scree(
    dir: &Path,
    manifest: &RunManifest,
    table: &ScreeTable<f64>,
) -> Result<(), CliFailure> {
    let mut rows = Vec::new();
    for spectrum in &table.spectra {
        let (model, lambda) = match spectrum.model {
            None => ("linear".to_string(), String::new()),
            Some((m, lambda)) => (format!("m={m}"), lambda.to_string()),
        };
        for (r, v) in spectrum.eigenvalues.iter().enumerate() {
            rows.push(format!("{model},{lambda},{},{}", r + 1, v));
        }
    }
    write_csv(dir, "scree.csv", manifest, "model,lambda,component,eigenvalue", &rows)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8, CliFailure> {
    if args.tau2 < 0.0 {
        return Err(input_failure("tau2 must be non-negative"));
    }
    let lambdas = parse_lambda_list(&args.lambdas).map_err(input_failure)?;
    let design = SimDesign::<f64>::new(args.n, args.tau2.sqrt(), args.seed)?;
    let names: Vec<String> = (1..=design.p()).map(|j| format!("v{j:02}")).collect();
    let mask = parse_monotone_mask(&args.monotone, &names).map_err(input_failure)?;
    let mut config = AlsConfig::new(design.m())
        .with_epsilon(args.epsilon)
        .with_max_iter(args.max_iter);
    config.seed = args.seed;
    let summaries = replicate_study(&design, &lambdas, &config, Some(&mask), args.reps)?;

    let params = json!({
        "n": args.n,
        "tau2": args.tau2,
        "lambdas": lambdas,
        "reps": args.reps,
        "seed": args.seed,
        "monotone": args.monotone,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "design": {
            "p": design.p(),
            "m": design.m(),
            "factor_variances": [6.0, 5.0, 4.0, 3.0, 2.0],
            "shapes": design.shape_map.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "cutpoints_sd_units": design.cutpoints,
        },
    });
    let mut manifest = RunManifest::new("simulate", None, params);
    let excluded: usize = summaries.iter().map(|s| s.failures).sum();
    if excluded > 0 {
        manifest
            .warnings
            .push(format!("{excluded} replication fits failed and were excluded"));
    }

    fs::create_dir_all(&args.out_dir)?;
    let mut rows = Vec::new();
    for summary in &summaries {
        for j in 0..design.p() {
            for l in 0..summary.mean_theta[j].len() {
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    summary.lambda,
                    names[j],
                    l + 1,
                    summary.mean_theta[j][l],
                    summary.sd_theta[j][l],
                    summary.replications
                ));
            }
        }
    }
    write_csv(
        &args.out_dir,
        "sim_summary.csv",
        &manifest,
        "lambda,variable,level,mean_theta,sd_theta,r_effective",
        &rows,
    )?;
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(0)
}
