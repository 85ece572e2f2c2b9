//! Command implementations behind the `passive-gp` binary.
//!
//! Every command returns the text it prints so tests can drive it without a
//! subprocess. All file outputs are deterministic given the inputs; the only
//! exception is the `created_unix` line of an efficiency manifest.

pub mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use passive_gp::bench::{generate_dataset, nmse, relative_error, sample_trajectory, ExperimentConfig, Waveform};
use passive_gp::dataset::fmt_f64;
use passive_gp::model_file;
use passive_gp::models::{optimize_hypervariances, FittedModel, ModelKernel, ModelKind, OptimizeOptions};
use passive_gp::passivity::{
    check_bound_diag, check_bound_full, compute_bound, enforce_bound, passivity_sweep, power_samples, summarize,
    sweep_points, EnforceMode, Hypervariances,
};
use passive_gp::{BoxDomain, Dataset, Error, Result};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Points used for the per-model violation count recorded in a manifest.
pub const MANIFEST_SWEEP_POINTS: usize = 1000;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Input(_) | Error::Parse { .. } | Error::Unsupported(_) => EXIT_INPUT,
        Error::Factorization { .. } | Error::Refused(_) => EXIT_NUMERICAL,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(name = "passive-gp", version, about = "Passive structured GP damping identification")]
pub struct Cli {
    /// Seed; overrides the config seed list where one is used.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/val/test CSVs for every seed.
    Generate,
    /// Fit a model and write it to a model file.
    Fit(FitArgs),
    /// Predict on a dataset and, with ground truth, write metrics.
    Evaluate(EvaluateArgs),
    /// NMSE against training size for every model kind.
    Efficiency(EfficiencyArgs),
    /// Dissipated-power sweep of a fitted model.
    Power(PowerArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnforceArg {
    /// Shrink hypervariances.
    Scale,
    /// Raise the noise variance.
    Noise,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// ard-gp, diag-d-gp or full-d-gp.
    #[arg(long)]
    pub kind: ModelKind,
    /// Comma-separated, one per velocity dimension.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lengthscales: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    /// Enforce the passivity bound (structured kinds only).
    #[arg(long)]
    pub constrained: bool,
    #[arg(long, value_enum, default_value = "scale")]
    pub enforce: EnforceArg,
    /// Objective evaluations for the hypervariance search.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Validation set; without it the data-driven initial guess is used.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub free_hypervariances: bool,
    /// Model file path; defaults to `<out-dir>/model_<kind>.txt`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// The test torques are ground truth; also write metrics.csv.
    #[arg(long)]
    pub truth_available: bool,
    /// Divisor of the relative error (e.g. a mass).
    #[arg(long, default_value_t = 1.0)]
    pub normalizer: f64,
}

#[derive(Debug, Args)]
pub struct EfficiencyArgs {
    /// Training sizes, ascending; overrides the config.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Box `lo:hi,lo:hi,...`; defaults to the training velocity bounding box.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

pub fn run(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg, cli.seed, &cli.out_dir),
        Command::Fit(a) => cmd_fit(&cfg, a, &cli.out_dir),
        Command::Evaluate(a) => cmd_evaluate(a, &cli.out_dir),
        Command::Efficiency(a) => cmd_efficiency(&cfg, a.sizes.as_deref(), cli.seed, &cli.out_dir),
        Command::Power(a) => cmd_power(a, cli.seed.unwrap_or(0), &cli.out_dir),
    }
}

/// Attaches the path to an I/O error.
fn io_context<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    io_context(path, Dataset::read_csv(path))
}

fn read_model(path: &Path) -> Result<FittedModel> {
    io_context(path, model_file::load(path))
}

pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::parse(&io_context(p, fs::read_to_string(p).map_err(Error::from))?),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Decorrelates per-purpose seeds derived from one user seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            io_context(dir, fs::create_dir_all(dir).map_err(Error::from))?;
        }
    }
    io_context(path, fs::write(path, contents).map_err(Error::from))
}

/// Train and validation samples follow the periodic trajectory (validation
/// offset by half a step); the test set is noise-free and uniform over the box.
pub fn generate_split(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sys = cfg.resolve_system()?;
    let d = sys.domain();
    let tq = sample_trajectory(d, cfg.train_size, seed, Waveform::Periodic { offset: 0.0 })?;
    let vq = sample_trajectory(d, cfg.val_size, seed, Waveform::Periodic { offset: 0.5 })?;
    let xq = sample_trajectory(d, cfg.test_size, derive_seed(seed, 3), Waveform::Uniform)?;
    Ok((
        generate_dataset(&sys, &tq, cfg.noise_std, derive_seed(seed, 1))?,
        generate_dataset(&sys, &vq, cfg.noise_std, derive_seed(seed, 2))?,
        generate_dataset(&sys, &xq, 0.0, 0)?,
    ))
}

pub fn cmd_generate(cfg: &ExperimentConfig, seed: Option<u64>, out_dir: &Path) -> Result<String> {
    let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
    let mut out = String::new();
    for s in seeds {
        let (train, val, test) = generate_split(cfg, s)?;
        for (name, data) in [("train", &train), ("val", &val), ("test", &test)] {
            let path = out_dir.join(format!("{name}_seed{s}.csv"));
            write_file(&path, &data.to_csv_string())?;
            writeln!(out, "wrote {} ({} rows, N = {})", path.display(), data.len(), data.dim()).unwrap();
        }
    }
    Ok(out)
}

/// Half the per-dimension range of the training velocities.
pub fn default_lengthscales(data: &Dataset) -> Vec<f64> {
    let q = data.velocities();
    (0..data.dim())
        .map(|n| {
            let (lo, hi) = q.column(n).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let half = 0.5 * (hi - lo);
            if half > 0.0 {
                half
            } else {
                1.0
            }
        })
        .collect()
}

/// Bound factor, feasibility and margin of a fitted structured model.
pub struct BoundSummary {
    pub c: f64,
    pub feasible: bool,
    pub margin: f64,
}

pub fn bound_summary(model: &FittedModel) -> Result<Option<BoundSummary>> {
    if !model.kind().is_structured() {
        return Ok(None);
    }
    let hv = model.kernel().hypervariances();
    let bound = compute_bound(model.train_data(), model.prior_mean(), model.noise_variance(), &hv)?;
    let (feasible, margin) = match hv {
        Hypervariances::Full(_) => {
            let c = check_bound_full(&bound);
            (c.feasible, c.margin)
        }
        Hypervariances::Diag(_) => {
            let c = check_bound_diag(&bound)?;
            (c.feasible, c.per_dim_margins.iter().copied().fold(f64::INFINITY, f64::min))
        }
    };
    Ok(Some(BoundSummary { c: bound.c, feasible, margin }))
}

/// Settings shared by `fit` and the efficiency experiment.
#[derive(Debug, Clone)]
pub struct FitSettings {
    pub kind: ModelKind,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub constrained: bool,
    pub enforce: EnforceMode,
    pub budget: usize,
    pub free_hypervariances: bool,
}

/// Optimizes hypervariances on `val` (the data-driven guess when absent),
/// then enforces the bound when constrained.
pub fn fit_model(train: &Dataset, val: Option<&Dataset>, s: &FitSettings) -> Result<(FittedModel, f64)> {
    if s.constrained && !s.kind.is_structured() {
        return Err(Error::Unsupported("--constrained applies only to diag-d-gp and full-d-gp".into()));
    }
    let opts = OptimizeOptions {
        budget: if val.is_some() { s.budget } else { 1 },
        constrained: s.constrained && s.enforce == EnforceMode::ScaleHypervariances,
        free_hypervariances: s.free_hypervariances,
        initial: None,
    };
    let res = optimize_hypervariances(s.kind, train, val.unwrap_or(train), &s.lengthscales, s.noise_variance, &opts)?;
    let mut hv = res.kernel.hypervariances();
    let mut noise = s.noise_variance;
    if s.constrained {
        let e = enforce_bound(&compute_bound(train, &res.prior_mean, noise, &hv)?, s.enforce)?;
        hv = e.hypervariances;
        noise = e.noise_variance;
    }
    let kernel = ModelKernel::build(s.kind, &s.lengthscales, &hv)?;
    Ok((FittedModel::fit(kernel, res.prior_mean, train, noise)?, res.validation_mse))
}

pub fn cmd_fit(cfg: &ExperimentConfig, a: &FitArgs, out_dir: &Path) -> Result<String> {
    let train = read_dataset(&a.train)?;
    let val = a.val.as_deref().map(read_dataset).transpose()?;
    let lengthscales = match a.lengthscales.clone().or_else(|| cfg.lengthscales.clone()) {
        Some(l) => l,
        None => default_lengthscales(&train),
    };
    if lengthscales.len() != train.dim() {
        return Err(Error::Input(format!("expected {} lengthscales, got {}", train.dim(), lengthscales.len())));
    }
    let settings = FitSettings {
        kind: a.kind,
        lengthscales,
        noise_variance: a.noise_variance.unwrap_or(cfg.noise_variance),
        constrained: a.constrained,
        enforce: match a.enforce {
            EnforceArg::Scale => EnforceMode::ScaleHypervariances,
            EnforceArg::Noise => EnforceMode::RaiseNoise,
        },
        budget: a.budget.unwrap_or(cfg.budget),
        free_hypervariances: a.free_hypervariances || cfg.free_hypervariances,
    };
    if !(settings.noise_variance > 0.0) {
        return Err(Error::Input("noise variance must be positive".into()));
    }
    let (model, val_mse) = fit_model(&train, val.as_ref(), &settings)?;
    let path = a.output.clone().unwrap_or_else(|| out_dir.join(format!("model_{}.txt", a.kind)));
    write_file(&path, &model_file::to_text(&model))?;
    let mut out = String::new();
    writeln!(out, "wrote {}", path.display()).unwrap();
    writeln!(out, "kind = {}", model.kind()).unwrap();
    writeln!(out, "noise_variance = {}", fmt_f64(model.noise_variance())).unwrap();
    if val.is_some() {
        writeln!(out, "validation_mse = {}", fmt_f64(val_mse)).unwrap();
    }
    match bound_summary(&model)? {
        Some(b) => {
            writeln!(out, "c = {}", fmt_f64(b.c)).unwrap();
            writeln!(out, "feasible = {}", b.feasible).unwrap();
            writeln!(out, "margin = {}", fmt_f64(b.margin)).unwrap();
        }
        None => writeln!(out, "bound = not applicable to {}", model.kind()).unwrap(),
    }
    Ok(out)
}

fn csv_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs, out_dir: &Path) -> Result<String> {
    let model = read_model(&a.model)?;
    let test = read_dataset(&a.test)?;
    if test.dim() != model.dim() {
        return Err(Error::Input(format!("test data has N = {} but the model has N = {}", test.dim(), model.dim())));
    }
    let n = model.dim();
    let pred = model.predict_torques(test.velocities())?;
    let mut csv = [csv_header("qd", n), csv_header("tau_hat", n)].concat().join(",");
    csv.push('\n');
    for i in 0..test.len() {
        let row: Vec<String> =
            test.velocities().row(i).iter().chain(pred.row(i).iter()).map(|v| fmt_f64(*v)).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let pred_path = out_dir.join("predictions.csv");
    write_file(&pred_path, &csv)?;
    let mut out = format!("wrote {} ({} rows, N = {n})\n", pred_path.display(), test.len());
    if a.truth_available {
        let truth = test.torques();
        let metrics = metrics_csv(&pred, truth, a.normalizer)?;
        let path = out_dir.join("metrics.csv");
        write_file(&path, &metrics)?;
        let agg = nmse(&pred, truth)?.aggregate;
        writeln!(out, "wrote {}", path.display()).unwrap();
        writeln!(out, "aggregate_nmse = {}", fmt_f64(agg)).unwrap();
    }
    Ok(out)
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Per-output NMSE and relative-error statistics, an aggregate row, and the
/// same aggregate for a predictor returning each output's mean.
pub fn metrics_csv(pred: &DMatrix<f64>, truth: &DMatrix<f64>, normalizer: f64) -> Result<String> {
    let rep = nmse(pred, truth)?;
    let rel = relative_error(pred, truth, normalizer)?;
    let mut out = String::from("row,nmse,rel_err_mean,rel_err_var\n");
    for k in 0..truth.ncols() {
        writeln!(out, "output_{},{},{},{}", k + 1, fmt_f64(rep.per_output[k]), fmt_f64(rel.mean[k]), fmt_f64(rel.variance[k]))
            .unwrap();
    }
    let (m, v) = mean_and_variance(rel.errors.as_slice());
    writeln!(out, "aggregate,{},{},{}", fmt_f64(rep.aggregate), fmt_f64(m), fmt_f64(v)).unwrap();
    let baseline = DMatrix::from_fn(truth.nrows(), truth.ncols(), |_, k| truth.column(k).mean());
    let brep = nmse(&baseline, truth)?;
    let brel = relative_error(&baseline, truth, normalizer)?;
    let (m, v) = mean_and_variance(brel.errors.as_slice());
    writeln!(out, "mean_predictor,{},{},{}", fmt_f64(brep.aggregate), fmt_f64(m), fmt_f64(v)).unwrap();
    Ok(out)
}

/// One fitted model of the efficiency experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRecord {
    pub kind: ModelKind,
    pub size: usize,
    pub seed: u64,
    pub nmse: Vec<f64>,
    pub aggregate_nmse: f64,
    pub validation_mse: f64,
    pub bound_c: Option<f64>,
    pub bound_margin: Option<f64>,
    pub violations: Option<usize>,
}

/// Volume-sampled train/val/test sets for one training size and seed.
pub fn efficiency_split(cfg: &ExperimentConfig, size: usize, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sys = cfg.resolve_system()?;
    let d = sys.domain();
    let tag = 16 * size as u64;
    let tq = sample_trajectory(d, size, derive_seed(seed, tag + 1), Waveform::Uniform)?;
    let vq = sample_trajectory(d, cfg.val_size, derive_seed(seed, tag + 2), Waveform::Uniform)?;
    let xq = sample_trajectory(d, cfg.test_size, derive_seed(seed, tag + 3), Waveform::Uniform)?;
    Ok((
        generate_dataset(&sys, &tq, cfg.noise_std, derive_seed(seed, tag + 4))?,
        generate_dataset(&sys, &vq, cfg.noise_std, derive_seed(seed, tag + 5))?,
        generate_dataset(&sys, &xq, 0.0, 0)?,
    ))
}

fn efficiency_for_seed(cfg: &ExperimentConfig, sizes: &[usize], seed: u64) -> Result<Vec<EfficiencyRecord>> {
    let sys = cfg.resolve_system()?;
    let lengthscales = cfg.effective_lengthscales(&sys)?;
    let mut kinds = cfg.kinds.clone();
    kinds.sort();
    kinds.dedup();
    let mut records = Vec::new();
    for &size in sizes {
        let (train, val, test) = efficiency_split(cfg, size, seed)?;
        for &kind in &kinds {
            let settings = FitSettings {
                kind,
                lengthscales: lengthscales.clone(),
                noise_variance: cfg.noise_variance,
                constrained: cfg.constrained && kind.is_structured(),
                enforce: EnforceMode::ScaleHypervariances,
                budget: cfg.budget,
                free_hypervariances: cfg.free_hypervariances,
            };
            let (model, validation_mse) = fit_model(&train, Some(&val), &settings)?;
            let rep = nmse(&model.predict_torques(test.velocities())?, test.torques())?;
            let bound = bound_summary(&model)?;
            let violations = if kind.is_structured() {
                Some(passivity_sweep(&model, sys.domain(), MANIFEST_SWEEP_POINTS, seed)?.violation_count)
            } else {
                None
            };
            records.push(EfficiencyRecord {
                kind,
                size,
                seed,
                nmse: rep.per_output,
                aggregate_nmse: rep.aggregate,
                validation_mse,
                bound_c: bound.as_ref().map(|b| b.c),
                bound_margin: bound.map(|b| b.margin),
                violations,
            });
        }
    }
    Ok(records)
}

/// Runs every (kind, size, seed) combination, one thread per seed. Records
/// are sorted by kind, size and seed.
pub fn run_efficiency(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<EfficiencyRecord>> {
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input(format!("training sizes must be positive and strictly ascending, got {sizes:?}")));
    }
    let results: Vec<Result<Vec<EfficiencyRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            cfg.seeds.iter().map(|&s| scope.spawn(move || efficiency_for_seed(cfg, sizes, s))).collect();
        handles.into_iter().map(|h| h.join().expect("efficiency worker panicked")).collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by(|a, b| (a.kind, a.size, a.seed).cmp(&(b.kind, b.size, b.seed)));
    Ok(records)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median aggregate NMSE per (kind, size).
pub fn efficiency_medians(records: &[EfficiencyRecord]) -> BTreeMap<(ModelKind, usize), f64> {
    let mut groups: BTreeMap<(ModelKind, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.kind, r.size)).or_default().push(r.aggregate_nmse);
    }
    groups.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn efficiency_csv(records: &[EfficiencyRecord]) -> String {
    let mut out = String::from("kind,size,seed,output,nmse\n");
    for r in records {
        for (k, v) in r.nmse.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", r.kind, r.size, r.seed, k + 1, fmt_f64(*v)).unwrap();
        }
    }
    out
}

pub fn efficiency_svg(records: &[EfficiencyRecord], system: &str) -> String {
    let medians = efficiency_medians(records);
    let mut series: Vec<svg::Series> = Vec::new();
    for ((kind, size), m) in medians {
        if series.last().map(|s| s.name.as_str()) != Some(kind.name()) {
            series.push(svg::Series { name: kind.name().to_string(), points: Vec::new() });
        }
        series.last_mut().unwrap().points.push((size as f64, m));
    }
    svg::line_chart_log_y(&format!("Median NMSE on {system}"), "training size", "median NMSE", &series)
}

/// Config snapshot, seeds and one metric record per fitted model.
pub fn manifest_text(cfg: &ExperimentConfig, sizes: &[usize], records: &[EfficiencyRecord], created_unix: u64) -> String {
    let mut out = String::from("passive-gp run manifest\n");
    writeln!(out, "tool_version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "created_unix = {created_unix}").unwrap();
    writeln!(out, "sizes = {}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")).unwrap();
    writeln!(out, "seeds = {}", cfg.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")).unwrap();
    out.push_str("\n[config]\n");
    out.push_str(&cfg.to_text());
    out.push_str("\n[records]\nkind,size,seed,aggregate_nmse,nmse,validation_mse,bound_c,bound_margin,violations\n");
    for r in records {
        let per: Vec<String> = r.nmse.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.kind,
            r.size,
            r.seed,
            fmt_f64(r.aggregate_nmse),
            per.join(";"),
            fmt_f64(r.validation_mse),
            opt_num(r.bound_c),
            opt_num(r.bound_margin),
            r.violations.map(|v| v.to_string()).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

pub fn cmd_efficiency(cfg: &ExperimentConfig, sizes: Option<&[usize]>, seed: Option<u64>, out_dir: &Path) -> Result<String> {
    let mut cfg = cfg.clone();
    if let Some(s) = sizes {
        cfg.training_sizes = s.to_vec();
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let sizes = cfg.training_sizes.clone();
    let records = run_efficiency(&cfg, &sizes)?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let files = [
        ("efficiency.csv", efficiency_csv(&records)),
        ("efficiency.svg", efficiency_svg(&records, &cfg.system)),
        ("config.txt", cfg.to_text()),
        ("manifest.txt", manifest_text(&cfg, &sizes, &records, created)),
    ];
    let mut out = String::new();
    for (name, text) in files {
        let path = out_dir.join(name);
        write_file(&path, &text)?;
        writeln!(out, "wrote {}", path.display()).unwrap();
    }
    for ((kind, size), m) in efficiency_medians(&records) {
        writeln!(out, "{kind} size {size}: median nmse {}", fmt_f64(m)).unwrap();
    }
    Ok(out)
}

/// Bounding box of the training velocities.
pub fn training_box(model: &FittedModel) -> Result<BoxDomain> {
    let q = model.train_data().velocities();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..q.ncols())
        .map(|n| q.column(n).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v))))
        .unzip();
    BoxDomain::new(lo, hi)
}

pub fn verdict(violations: usize, min_power: f64) -> String {
    if violations == 0 {
        format!("PASSIVE (min={})", fmt_f64(min_power))
    } else {
        format!("VIOLATIONS {violations} (min={})", fmt_f64(min_power))
    }
}

pub fn cmd_power(a: &PowerArgs, seed: u64, out_dir: &Path) -> Result<String> {
    let model = read_model(&a.model)?;
    let domain = match &a.domain {
        Some(d) => BoxDomain::parse(d)?,
        None => training_box(&model)?,
    };
    if domain.dim() != model.dim() {
        return Err(Error::Input(format!("domain has dimension {} but the model has N = {}", domain.dim(), model.dim())));
    }
    if a.samples == 0 {
        return Err(Error::Input("samples must be at least 1".into()));
    }
    let powers = power_samples(&model, &sweep_points(&domain, a.samples, seed))?;
    let report = summarize(&powers);
    let mut csv = csv_header("qd", model.dim()).join(",");
    csv.push_str(",power,violation\n");
    for p in &powers {
        let row: Vec<String> = p.point.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(csv, "{},{},{}", row.join(","), fmt_f64(p.power), u8::from(p.violation)).unwrap();
    }
    let values: Vec<f64> = powers.iter().map(|p| p.power).collect();
    let edges = svg::histogram_edges(&values, 10);
    let counts = svg::histogram_counts(&values, &edges);
    let chart = svg::histogram(&format!("Dissipated power, {} samples", powers.len()), "power", &edges, &counts);
    let mut out = String::new();
    for (name, text) in [("power.csv", csv), ("power.svg", chart)] {
        let path = out_dir.join(name);
        write_file(&path, &text)?;
        writeln!(out, "wrote {}", path.display()).unwrap();
    }
    writeln!(out, "{}", verdict(report.violation_count, report.min_power)).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::Input("x".into())),
            exit_code(&Error::Factorization { ladder: vec![] }),
            exit_code(&Error::Infeasible("x".into())),
            exit_code(&Error::Io(std::io::Error::other("x"))),
        ];
        assert_eq!(codes, [EXIT_INPUT, EXIT_NUMERICAL, EXIT_INFEASIBLE, EXIT_IO]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(0, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn metrics_baseline_row_is_one() {
        let truth = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 5.0, 4.0, -1.0]);
        let text = metrics_csv(&truth, &truth, 1.0).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("mean_predictor,1.0000000000000000e0,"), "{last}");
        assert!(text.contains("aggregate,0.0000000000000000e0,"));
    }

    #[test]
    fn verdict_format() {
        assert_eq!(verdict(0, 0.0), "PASSIVE (min=0.0000000000000000e0)");
        assert!(verdict(3, -1.5).starts_with("VIOLATIONS 3 (min=-1.5"));
    }
}
