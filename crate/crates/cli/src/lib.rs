//! Command-line front end: `fit`, `simulate`, `analyze` and `generate`.
//!
//! Exit codes: 0 success, 1 input or numerical error, 3 a fit stopped at its
//! iteration cap (outputs are still written).

pub mod dataset;
pub mod params_file;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use matnorm::missing::{fit_em, fit_gem, fit_mm};
use matnorm::model::sample;
use matnorm::sim::{inject_missing, random_params, run_grid_with_progress, Method, SimConfig, SimReport};
use matnorm::spectral::{
    accuracy, classify_projected, confusion_matrix, fit_class_models, hierarchical_cluster, pca,
    project_completions, projected_params, separability, LabeledObservationSet,
};
use matnorm::{fit_mle, DenseMatrix, FitConfig, MatNormParams, ObservationSet, SpdMatrix};
use serde::Serialize;

use crate::dataset::{dataset_to_csv, read_dataset};
use crate::params_file::{FitMeta, ParamsFile, FORMAT_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "matnorm", version, about = "Matrix normal estimation with missing data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one estimator to a dataset and write a parameter file.
    Fit(FitArgs),
    /// Run the estimator comparison grid and write a CSV report.
    Simulate(SimulateArgs),
    /// Class models, PCA of the row covariance, separability and classification.
    Analyze(AnalyzeArgs),
    /// Draw a synthetic dataset.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Mle,
    Mm,
    Gem,
    Em,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassMethod {
    Mm,
    Em,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// Relative log-likelihood tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Recorded in the output; the estimators themselves are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl FitOptions {
    fn config(&self) -> FitConfig {
        let mut cfg = FitConfig::default();
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: FitMethod,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(long)]
    pub output: PathBuf,
    /// Print the log-likelihood of every iteration to standard error.
    #[arg(long)]
    pub verbose: bool,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (p, q) = s.split_once(['x', 'X']).ok_or_else(|| format!("{s:?} is not of the form PxQ"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
    Ok((parse(p)?, parse(q)?))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: matnorm::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated `PxQ` pairs.
    #[arg(long, value_delimiter = ',', value_parser = parse_dims, default_value = "3x5,3x7")]
    pub dims: Vec<(usize, usize)>,
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
    pub sizes: Vec<usize>,
    /// Missing proportions in (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2")]
    pub miss: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "mm,gem,em")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Report CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-cell median summary; defaults to the report path with `.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Labelled dataset.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: ClassMethod,
    /// Principal components kept for projection, distances and classification.
    #[arg(long, default_value_t = 2)]
    pub pcs: usize,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
    /// Observations per class.
    #[arg(long)]
    pub n: usize,
    /// Classes share the row covariance; a single class writes no label column.
    #[arg(long, default_value_t = 1)]
    pub classes: usize,
    /// Scale of the random offset between class means.
    #[arg(long, default_value_t = 1.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.0)]
    pub miss: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Whether every fit converged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => EXIT_OK,
            Status::NotConverged => EXIT_NOT_CONVERGED,
        }
    }

    fn from_converged(c: bool) -> Self {
        if c {
            Status::Converged
        } else {
            Status::NotConverged
        }
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Caps the global rayon pool at `MATNORM_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MATNORM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .with_context(|| format!("MATNORM_THREADS={raw:?} is not a positive integer"))?;
    // A pool already built by an earlier call keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Generate(a) => cmd_generate(&a),
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<Status> {
    let ds = read_dataset(&args.input)?;
    let data = &ds.data;
    ensure!(
        (data.p(), data.q()) == (args.p, args.q),
        "dataset is {}x{} but --p {} --q {} was given",
        data.p(),
        data.q(),
        args.p,
        args.q
    );
    let cfg = args.options.config();
    let method = format!("{:?}", args.method).to_lowercase();
    let meta = |iterations, loglik, converged| FitMeta { method: method.clone(), iterations, loglik, converged, seed: args.options.seed };

    let (file, trace, converged) = match args.method {
        FitMethod::Gem => {
            let fit = fit_gem(data, &cfg)?;
            let file = ParamsFile::from_unstructured(&fit.params, data.p(), data.q(), meta(fit.iterations, fit.final_loglik(), fit.converged));
            (file, fit.loglik_trace, fit.converged)
        }
        m => {
            let fit = match m {
                FitMethod::Mle => {
                    if let Some((i, r, c)) = data.first_missing() {
                        bail!(
                            "method mle needs complete data, but observation {} row {} column {} is missing \
                             (column x_r{}_c{}); use em, mm or gem",
                            i + 1,
                            r + 1,
                            c + 1,
                            r + 1,
                            c + 1
                        );
                    }
                    fit_mle(data, &cfg)?
                }
                FitMethod::Mm => fit_mm(data, &cfg)?,
                FitMethod::Em => fit_em(data, &cfg)?,
                FitMethod::Gem => unreachable!(),
            };
            let file = ParamsFile::from_params(&fit.params, meta(fit.iterations, fit.final_loglik(), fit.converged));
            (file, fit.loglik_trace, fit.converged)
        }
    };
    if args.verbose {
        for (k, ll) in trace.iter().enumerate() {
            eprintln!("{method} iteration {k}: loglik {ll:.10e}");
        }
    }
    write_atomic(&args.output, file.to_json()?.as_bytes())?;
    if !converged {
        eprintln!("{method} did not converge within {} iterations; parameters written anyway", cfg.max_iters);
    }
    Ok(Status::from_converged(converged))
}

pub fn report_csv(report: &SimReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "p",
        "q",
        "N",
        "miss_prop",
        "replicate",
        "rel_err_sigma",
        "rel_err_mu",
        "runtime_seconds",
        "iterations",
        "converged",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.method.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.n.to_string(),
            format_float(r.miss_prop),
            r.replicate.to_string(),
            format_float(r.rel_err_sigma),
            format_float(r.rel_err_mu),
            format_float(r.runtime_seconds),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
struct SimSummaryFile<'a> {
    format_version: u32,
    config: &'a SimConfig,
    cells: Vec<matnorm::sim::CellSummary>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Status> {
    let mut fit = FitConfig::default();
    if let Some(t) = args.tol {
        fit.tol = t;
    }
    if let Some(m) = args.max_iters {
        fit.max_iters = m;
    }
    let cfg = SimConfig {
        dims: args.dims.clone(),
        sample_sizes: args.sizes.clone(),
        miss_props: args.miss.clone(),
        replicates: args.replicates,
        seed: args.seed,
        methods: args.methods.clone(),
        fit,
    };
    cfg.validate()?;
    let start = Instant::now();
    let report = run_grid_with_progress(&cfg, |done, total| {
        if done == total || done % 10 == 0 {
            eprintln!("simulate: {done}/{total} replicates ({:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    write_atomic(&args.output, &report_csv(&report)?)?;
    let summary_path = args.summary.clone().unwrap_or_else(|| args.output.with_extension("summary.json"));
    let summary = SimSummaryFile { format_version: FORMAT_VERSION, config: &cfg, cells: report.summary() };
    write_atomic(&summary_path, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    let failures = report.rows.iter().filter(|r| !r.converged).count();
    if failures > 0 {
        eprintln!("simulate: {failures} of {} fits did not converge", report.rows.len());
    }
    Ok(Status::from_converged(failures == 0))
}

#[derive(Serialize)]
struct DendrogramFile {
    format_version: u32,
    /// Leaf `i` is class `i + 1`; merge `t` creates cluster `leaves + t`.
    leaves: usize,
    merges: Vec<matnorm::spectral::Merge>,
}

#[derive(Serialize)]
struct AnalysisSummary {
    format_version: u32,
    method: String,
    p: usize,
    q: usize,
    n: usize,
    classes: usize,
    pcs: usize,
    variance_captured: f64,
    total_distance: f64,
    log_d: f64,
    accuracy: f64,
    iterations: usize,
    converged: bool,
    loglik: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    wall_time_seconds: f64,
}

fn matrix_csv(m: &DenseMatrix, corner: &str, col_label: impl Fn(usize) -> String) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![corner.to_string()];
    header.extend((0..m.ncols()).map(&col_label));
    w.write_record(header)?;
    for i in 0..m.nrows() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(m.row(i).iter().map(|&v| format_float(v)));
        w.write_record(rec)?;
    }
    Ok(w.into_inner()?)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Status> {
    let start = Instant::now();
    let ds = read_dataset(&args.input)?;
    let Some(labels) = ds.labels.clone() else {
        bail!("analyze needs a labelled dataset (first column `label`)");
    };
    let (p, q) = (ds.data.p(), ds.data.q());
    ensure!(args.pcs >= 1 && args.pcs <= p, "--pcs {} is outside 1..={p}", args.pcs);
    let labeled = LabeledObservationSet::new(ds.data, labels)?;
    ensure!(labeled.classes() >= 2, "analyze needs at least 2 classes, found {}", labeled.classes());
    let method = match args.method {
        ClassMethod::Mm => Method::Mm,
        ClassMethod::Em => Method::Em,
    };
    let cfg = args.options.config();
    let model = fit_class_models(&labeled, method, &cfg)?;
    info!("{method} class fit: {} iterations, converged {}", model.iterations, model.converged);

    let full_pca = pca(model.sigma_s(), p)?;
    let pcs = pca(model.sigma_s(), args.pcs)?;
    let projected = project_completions(&model, &pcs)?;
    let sep = separability(&projected, labeled.labels(), labeled.classes())?;
    let tree = hierarchical_cluster(&sep.distances)?;
    let class_params = projected_params(&model, &pcs)?;
    let predicted = projected.iter().map(|y| classify_projected(y, &class_params)).collect::<matnorm::Result<Vec<_>>>()?;
    let confusion = confusion_matrix(labeled.labels(), &predicted, labeled.classes())?;

    std::fs::create_dir_all(&args.outdir).with_context(|| format!("cannot create {}", args.outdir.display()))?;
    let out = |name: &str| args.outdir.join(name);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "eigenvalue", "fraction", "cumulative"])?;
    for (j, ((l, f), c)) in full_pca.eigenvalues.iter().zip(&full_pca.fractions).zip(full_pca.cumulative()).enumerate() {
        w.write_record([(j + 1).to_string(), format_float(*l), format_float(*f), format_float(c)])?;
    }
    write_atomic(&out("pca.csv"), &w.into_inner()?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string(), "observation".into(), "column".into()];
    header.extend((1..=args.pcs).map(|j| format!("pc{j}")));
    w.write_record(header)?;
    for (i, (y, l)) in projected.iter().zip(labeled.labels()).enumerate() {
        for c in 0..q {
            let mut rec = vec![l.to_string(), (i + 1).to_string(), (c + 1).to_string()];
            rec.extend(y.column(c).iter().map(|&v| format_float(v)));
            w.write_record(rec)?;
        }
    }
    write_atomic(&out("projections.csv"), &w.into_inner()?)?;

    write_atomic(&out("distances.csv"), &matrix_csv(&sep.distances, "class", |j| (j + 1).to_string())?)?;
    write_atomic(&out("confusion.csv"), &matrix_csv(&confusion, "true", |j| format!("pred_{}", j + 1))?)?;
    let dendro = DendrogramFile { format_version: FORMAT_VERSION, leaves: tree.leaves, merges: tree.merges };
    write_atomic(&out("dendrogram.json"), (serde_json::to_string_pretty(&dendro)? + "\n").as_bytes())?;

    let summary = AnalysisSummary {
        format_version: FORMAT_VERSION,
        method: method.to_string(),
        p,
        q,
        n: labeled.data().n(),
        classes: labeled.classes(),
        pcs: args.pcs,
        variance_captured: pcs.cumulative().last().copied().unwrap_or(0.0),
        total_distance: sep.total,
        log_d: sep.log_total(),
        accuracy: accuracy(&confusion),
        iterations: model.iterations,
        converged: model.converged,
        loglik: model.loglik_trace.last().copied().unwrap_or(f64::NAN),
        seed: args.options.seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_atomic(&out("summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    Ok(Status::from_converged(model.converged))
}

fn class_params(base: &MatNormParams, args: &GenerateArgs, class: usize) -> Result<MatNormParams> {
    if class == 0 {
        return Ok(base.clone());
    }
    let other = random_params(args.p, args.q, args.seed.wrapping_add(1000 * class as u64))?;
    let offset = other.mu() * args.shift;
    Ok(MatNormParams::new(
        base.mu() + offset,
        base.sigma_s().clone(),
        other.sigma_c().clone(),
        other.sigma2(),
    )?)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Status> {
    ensure!(args.classes >= 1, "--classes must be at least 1");
    ensure!(args.n >= 2, "--n must be at least 2");
    let base = random_params(args.p, args.q, args.seed)?;
    let mut obs = Vec::with_capacity(args.n * args.classes);
    let mut labels = Vec::with_capacity(obs.capacity());
    for class in 0..args.classes {
        let params = class_params(&base, args, class)?;
        obs.extend_from_slice(sample(&params, args.n, args.seed.wrapping_add(1 + class as u64))?.observations());
        labels.extend(std::iter::repeat_n(class + 1, args.n));
    }
    let data = ObservationSet::new(args.p, args.q, obs)?;
    let data = if args.miss > 0.0 { inject_missing(&data, args.miss, args.seed.wrapping_add(999))? } else { data };
    let labels = (args.classes > 1).then_some(labels);
    write_atomic(&args.output, &dataset_to_csv(&data, labels.as_deref())?)?;
    Ok(Status::Converged)
}

/// Loads `(μ, σ² Σ_c ⊗ Σ_s)` or the unstructured covariance from a file.
pub fn load_full_covariance(path: &Path) -> Result<(DenseMatrix, SpdMatrix)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let u = ParamsFile::from_json(&text)?.to_unstructured()?;
    Ok((u.mean, u.cov))
}
