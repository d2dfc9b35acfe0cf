//! Command-line interface.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{mt_detect, Correction, MtConfig, ScanGrid};
use crate::binarizer::{fit_bins, transform, DEFAULT_BINS};
use crate::cutpoints::{extract_cutpoints, CutPointModel, DEFAULT_JUMP_TOLERANCE};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::metrics::{c_index, m1, m2, write_metrics_csv, MetricsRow};
use crate::pipeline::{
    binarized_risk, continuous_risk, fit_binacox, screen, train_test_split, BinacoxModel, BinacoxOptions,
};
use crate::prox::WeightVector;
use crate::selection::gamma_max;
use crate::simulation::{simulate, GroundTruth, SimConfig};
use crate::solver::{fit, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "binacox", version, about = "Multiple cut-point detection in Cox models")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort with known cut-points.
    Simulate(SimulateArgs),
    /// Detect cut-points with the binarsity-penalized Cox model.
    Fit(FitArgs),
    /// Rank features by univariate total variation.
    Screen(ScreenArgs),
    /// Detect at most one cut-point per feature by multiple testing.
    Baseline(BaselineArgs),
    /// Score cut-point files against the truth and on held-out prediction.
    Evaluate(EvaluateArgs),
    /// Time binacox against the multiple-testing baselines.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 2)]
    pub k_star: usize,
    #[arg(long, default_value_t = 2.0)]
    pub nu: f64,
    /// Weibull shape.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Target censoring rate.
    #[arg(long, default_value_t = 0.3)]
    pub r_c: f64,
    /// Fraction of features without effect.
    #[arg(long, default_value_t = 0.2)]
    pub r_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Fixed penalty strength; cross-validated when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of features kept.
    #[arg(long)]
    pub top: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 30)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MtMethod {
    MtB,
    MtLs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridArg {
    All,
    Scheme,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: MtMethod,
    #[arg(long, value_enum, default_value = "all")]
    pub grid: GridArg,
    /// Bins of the scheme grid.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Ground truth JSON; without it only C-indexes are reported.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Cut-point files to compare (repeatable).
    #[arg(long = "cutpoints", required = true, num_args = 1..)]
    pub cutpoints: Vec<PathBuf>,
    /// Share of rows used for the refits.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    N,
    P,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Sample size when sweeping p.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Dimension when sweeping n.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_NUMERIC,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Screen(a) => cmd_screen(&a),
        Command::Baseline(a) => cmd_baseline(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let config = SimConfig {
        n: a.n,
        p: a.p,
        rho: a.rho,
        k_star: a.k_star,
        nu: a.nu,
        shape: a.sigma,
        censoring_rate: a.r_c,
        sparse_fraction: a.r_s,
        seed: a.seed,
    };
    let sim = simulate(&config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    sim.dataset.write_csv(a.out_dir.join("data.csv"))?;
    sim.truth.write(a.out_dir.join("truth.json"))?;
    println!("n = {}, p = {}, censoring rate = {:.4}", sim.dataset.n(), sim.dataset.p(), sim.dataset.censoring_rate());
    Ok(())
}

fn options(bins: usize, gamma: Option<f64>, folds: usize, grid_size: usize, seed: u64) -> BinacoxOptions {
    BinacoxOptions { bins, gamma, folds, grid_size, seed, ..Default::default() }
}

/// Long-format step functions: one row per bin of every feature.
fn write_coefficients(model: &BinacoxModel, names: &[String], dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "coefficients.csv")?);
    w.write_record(["feature", "bin", "lower", "upper", "beta"])?;
    for ((block, bins), name) in model.fit.beta.blocks().zip(model.scheme.features()).zip(names) {
        for (l, b) in block.iter().enumerate() {
            let lower = if l == 0 { f64::NEG_INFINITY } else { bins.boundaries[l - 1] };
            let upper = bins.boundaries.get(l).copied().unwrap_or(f64::INFINITY);
            w.write_record([name.clone(), l.to_string(), lower.to_string(), upper.to_string(), b.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let ds = SurvivalDataset::read_csv(&a.data)?;
    let model = fit_binacox(&ds, &options(a.bins, a.gamma, a.folds, a.grid_size, a.seed))?;
    std::fs::create_dir_all(&a.out_dir)?;
    model.cutpoints.write(a.out_dir.join("cutpoints.json"))?;
    if let Some(cv) = &model.cv {
        cv.write_csv(create(&a.out_dir, "cv.csv")?)?;
        cv.write_fold_csv(create(&a.out_dir, "cv_folds.csv")?)?;
    }
    write_coefficients(&model, ds.names(), &a.out_dir)?;
    let mut w = csv::Writer::from_writer(create(&a.out_dir, "trace.csv")?);
    w.write_record(["iteration", "objective"])?;
    for (k, v) in model.fit.objective_trace.iter().enumerate() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    println!("gamma = {:e}, detected cut-points = {}", model.gamma, model.cutpoints.k_hat().iter().sum::<usize>());
    Ok(())
}

fn cmd_screen(a: &ScreenArgs) -> Result<()> {
    let ds = SurvivalDataset::read_csv(&a.data)?;
    let s = screen(&ds, &options(a.bins, a.gamma, a.folds, a.grid_size, a.seed), a.top)?;
    let mut w = csv::Writer::from_writer(create(&a.out_dir, "screen.csv")?);
    w.write_record(["rank", "feature", "name", "score"])?;
    for (r, f) in s.ranked.iter().enumerate() {
        w.write_record([(r + 1).to_string(), f.feature.to_string(), ds.names()[f.feature].clone(), f.score.to_string()])?;
    }
    w.flush()?;
    if let Some(cv) = &s.cv {
        cv.write_csv(create(&a.out_dir, "cv.csv")?)?;
    }
    println!("gamma = {:e}, kept {} features", s.gamma, s.ranked.len());
    Ok(())
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let ds = SurvivalDataset::read_csv(&a.data)?;
    let correction = match a.method {
        MtMethod::MtB => Correction::Bonferroni,
        MtMethod::MtLs => Correction::LausenSchumacher,
    };
    let (grid, scheme) = match a.grid {
        GridArg::All => (ScanGrid::All, None),
        GridArg::Scheme => (ScanGrid::Scheme, Some(fit_bins(&ds, a.bins)?)),
    };
    let res = mt_detect(&ds, scheme.as_ref(), MtConfig { grid, correction, alpha: a.alpha })?;
    std::fs::create_dir_all(&a.out_dir)?;
    res.model.write(a.out_dir.join("cutpoints.json"))?;
    res.write_scan_csv(create(&a.out_dir, "scan.csv")?)?;
    println!("{}: {} cut-points selected", res.model.method, res.model.k_hat().iter().sum::<usize>());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ds = SurvivalDataset::read_csv(&a.data)?;
    let truth = a.truth.as_ref().map(GroundTruth::read).transpose()?;
    if let Some(t) = &truth {
        if t.p() != ds.p() {
            return Err(Error::ShapeMismatch(format!("truth has {} features, data has {}", t.p(), ds.p())));
        }
    }
    let (tr, te) = train_test_split(ds.n(), a.train_fraction, a.seed)?;
    let (train, test) = (ds.subset(&tr)?, ds.subset(&te)?);
    let solver = SolverConfig { record_trace: false, ..Default::default() };
    let score = |risk: Vec<f64>| -> Result<f64> { Ok(c_index(&risk, test.times(), test.events(), None)?.c_index) };
    let mut rows = Vec::new();
    for path in &a.cutpoints {
        let model = CutPointModel::read(path)?;
        if model.features.len() != ds.p() {
            return Err(Error::ShapeMismatch(format!(
                "{} lists {} features, data has {}",
                path.display(),
                model.features.len(),
                ds.p()
            )));
        }
        let cuts = model.cutpoints();
        let (m1v, m2v) = match &truth {
            Some(t) => (m1(&t.mu_star, &cuts)?, (!t.sparse_set.is_empty()).then(|| m2(&model.k_hat(), &t.sparse_set)).transpose()?),
            None => (None, None),
        };
        let c = score(binarized_risk(&train, &test, &cuts, &solver)?)?;
        rows.push(MetricsRow { method: model.method.clone(), m1: m1v, m2: m2v, c_index: Some(c) });
    }
    let c = score(continuous_risk(&train, &test, &solver)?)?;
    rows.push(MetricsRow { method: "cox-continuous".into(), m1: None, m2: None, c_index: Some(c) });
    write_metrics_csv(&rows, create(&a.out_dir, "metrics.csv")?)?;
    for r in &rows {
        println!("{}: c_index = {:.4}", r.method, r.c_index.unwrap_or(f64::NAN));
    }
    Ok(())
}

/// Binning, threshold computation and one penalized fit at `γ_max / 10`,
/// with cut-point extraction.
pub fn bench_binacox_fit(ds: &SurvivalDataset, bins: usize) -> Result<usize> {
    let scheme = fit_bins(ds, bins)?;
    let design = transform(ds, &scheme)?;
    let gamma = 0.1 * gamma_max(&design, ds.times(), ds.events())?;
    let w = WeightVector::uniform(design.layout(), gamma)?;
    let solver = SolverConfig { record_trace: false, ..Default::default() };
    let res = fit(&design, ds.times(), ds.events(), &w, &design.column_counts(), &solver)?;
    let m = extract_cutpoints(&res.beta, &scheme, ds.names(), DEFAULT_JUMP_TOLERANCE)?;
    Ok(m.k_hat().iter().sum())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let mut w = csv::Writer::from_writer(create(&a.out_dir, "bench.csv")?);
    w.write_record(["sweep", "value", "n", "p", "method", "reps", "mean_seconds", "sd_seconds"])?;
    let sweep = match a.sweep {
        SweepArg::N => "n",
        SweepArg::P => "p",
    };
    for &value in &a.values {
        let (n, p) = match a.sweep {
            SweepArg::N => (value, a.p),
            SweepArg::P => (a.n, value),
        };
        let mut times: [Vec<f64>; 3] = Default::default();
        for r in 0..a.reps {
            let config = SimConfig { n, p, sparse_fraction: 0.0, seed: a.seed, ..Default::default() }.for_replicate(r as u64);
            let ds = simulate(&config)?.dataset;
            let t = Instant::now();
            bench_binacox_fit(&ds, a.bins)?;
            times[0].push(t.elapsed().as_secs_f64());
            let scheme = fit_bins(&ds, a.bins)?;
            let t = Instant::now();
            mt_detect(&ds, Some(&scheme), MtConfig { grid: ScanGrid::Scheme, correction: Correction::Bonferroni, alpha: 0.05 })?;
            times[1].push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            mt_detect(&ds, None, MtConfig { grid: ScanGrid::All, correction: Correction::Bonferroni, alpha: 0.05 })?;
            times[2].push(t.elapsed().as_secs_f64());
        }
        for (method, ts) in ["binacox", "mt-grid", "mt-all"].iter().zip(&times) {
            let (mean, sd) = mean_sd(ts);
            w.write_record([
                sweep.to_string(),
                value.to_string(),
                n.to_string(),
                p.to_string(),
                method.to_string(),
                a.reps.to_string(),
                mean.to_string(),
                sd.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
