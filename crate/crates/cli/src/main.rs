use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fgn_approx::ar1_fit::{build_table_with, CoeffTable, TableOptions, DEFAULT_GRID_SIZE};
use fgn_approx::data::{load_series, ReadOptions};
use fgn_approx::fgn_exact::{loglik_exact, simulate_exact};
use fgn_approx::gmrf::{assemble_precision, band_cholesky_flops, default_kappa};
use fgn_approx::hurst::HurstParams;
use fgn_approx::inference::{
    decompose, kld, loglik_approx_flops, loglik_approx_profiled, mle, prediction_error_study,
    replication_study, Model, MleOptions, MleResult, PredictionStudyOptions, Predictor,
    ReplicationOptions,
};

#[derive(Parser)]
#[command(name = "fgnx", version, about = "Exact and approximate fractional Gaussian noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit AR(1) mixtures over a grid of H and write a coefficient table
    BuildTable(BuildTableArgs),
    /// Simulate a series from the exact or approximate model
    Simulate(SimulateArgs),
    /// Maximum-likelihood estimation of H and sigma
    Estimate(EstimateArgs),
    /// Predict future values of an observed series
    Predict(PredictArgs),
    /// Monte Carlo comparison of exact and approximate estimates of H
    Replicate(ReplicateArgs),
    /// Prediction error of the approximate model relative to the exact one
    PredictStudy(PredictStudyArgs),
    /// Kullback-Leibler divergence from exact to approximate model
    Kld(KldArgs),
    /// Split a series into weighted AR(1) components
    Decompose(DecomposeArgs),
    /// Timing and flop counts of the likelihood evaluations
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Exact,
    Approx,
}

#[derive(Args, Clone)]
struct TableArgs {
    /// Number of AR(1) components
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=8))]
    m: u8,
    /// Coefficient table file (default: the shipped table for m = 3 or 4)
    #[arg(long)]
    table: Option<PathBuf>,
    /// Precision of the augmentation noise
    #[arg(long, default_value_t = default_kappa())]
    kappa: f64,
}

impl TableArgs {
    fn load(&self) -> Result<CoeffTable> {
        load_table(self.table.as_deref(), self.m as usize)
    }
}

fn load_table(path: Option<&Path>, m: usize) -> Result<CoeffTable> {
    let table = match path {
        Some(p) => CoeffTable::load(p).with_context(|| format!("reading table {}", p.display()))?,
        None => CoeffTable::builtin(m).context("no shipped table for this m; pass --table")?,
    };
    if table.m() != m {
        bail!("table has m = {}, requested m = {m}", table.m());
    }
    Ok(table)
}

#[derive(Args)]
struct InputArgs {
    /// Data file: one value per line, optional header, optional precision column
    #[arg(long)]
    input: PathBuf,
    /// Token marking missing values
    #[arg(long, default_value = "NA")]
    na_string: String,
}

#[derive(Args)]
struct BuildTableArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
    m: u8,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(10..))]
    kmax: u32,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid: usize,
    /// Table with m - 1 components whose fits are embedded as extra starts
    #[arg(long)]
    nested: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    /// Output table file
    #[arg(long)]
    output: PathBuf,
    /// Also write weights and coefficients per grid point as CSV
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Exact)]
    model: ModelArg,
    #[arg(long = "H")]
    hurst: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::Exact)]
    model: ModelArg,
    #[command(flatten)]
    table: TableArgs,
    /// Fit without subtracting the sample mean
    #[arg(long)]
    no_center: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::Exact)]
    model: ModelArg,
    #[command(flatten)]
    table: TableArgs,
    /// Prediction horizon
    #[arg(long)]
    p: usize,
    /// H to predict with (estimated when absent)
    #[arg(long = "H")]
    hurst: Option<f64>,
    /// Sigma to predict with (estimated when absent)
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long = "H")]
    hurst: f64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Number of replications
    #[arg(long = "N", default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    replications: u32,
    /// Component counts of the approximate models
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    m: Vec<usize>,
    /// Tables, one per entry of --m (default: shipped tables)
    #[arg(long, value_delimiter = ',')]
    table: Vec<PathBuf>,
    #[arg(long, default_value_t = default_kappa())]
    kappa: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Subtract the sample mean of each replication before fitting
    #[arg(long)]
    center: bool,
    /// Per-replication estimates as CSV
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    allow_partial: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PredictStudyArgs {
    #[arg(long = "H")]
    hurst: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Maximum horizon
    #[arg(long, default_value_t = 250)]
    p: usize,
    #[arg(long = "N", default_value_t = 100)]
    replications: usize,
    /// Model whose predictions are compared with the exact ones
    #[arg(long, value_enum, default_value_t = ModelArg::Approx)]
    model: ModelArg,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct KldArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    table: Vec<PathBuf>,
    /// H values (default: 11 points from 0.55 to 0.95)
    #[arg(long = "H", value_delimiter = ',')]
    hurst: Vec<f64>,
    #[arg(long, default_value_t = default_kappa())]
    kappa: f64,
    /// KL(approximate || exact) instead
    #[arg(long)]
    reverse: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    table: TableArgs,
    /// H to decompose with (estimated when absent)
    #[arg(long = "H")]
    hurst: Option<f64>,
    /// Sigma to decompose with (estimated when absent)
    #[arg(long)]
    sigma: Option<f64>,
    /// Report the largest gap between the component sum and the latent mean
    #[arg(long)]
    check: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    table: TableArgs,
    #[arg(long = "H", default_value_t = 0.8)]
    hurst: f64,
    /// Series lengths for the approximate model
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000,1000000")]
    n: Vec<usize>,
    /// Series lengths for the exact model
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000")]
    exact_n: Vec<usize>,
    /// Timed repetitions per length (minimum is reported)
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn build_table_cmd(args: &BuildTableArgs) -> Result<()> {
    let m = args.m as usize;
    let nested = args
        .nested
        .as_deref()
        .map(|p| load_table(Some(p), m - 1))
        .transpose()?;
    let mut opts = TableOptions::default();
    opts.fit.seed = args.seed;
    let table = build_table_with(m, args.kmax as usize, args.grid, &opts, nested.as_ref())?;
    table.save(&args.output)?;
    let mut out = writer(None)?;
    writeln!(out, "index,H,objective")?;
    for (i, e) in table.entries().iter().enumerate() {
        writeln!(out, "{i},{},{:e}", e.hurst(), e.objective)?;
    }
    if let Some(path) = &args.curves {
        let mut csv = writer(Some(path))?;
        let w: Vec<String> = (1..=m).map(|j| format!("w{j}")).collect();
        let phi: Vec<String> = (1..=m).map(|j| format!("phi{j}")).collect();
        writeln!(csv, "H,h,{},{},objective", w.join(","), phi.join(","))?;
        for e in table.entries() {
            let fields: Vec<String> = e
                .params
                .weights()
                .iter()
                .chain(e.params.coefficients().iter())
                .map(|v| v.to_string())
                .collect();
            writeln!(csv, "{},{},{},{:e}", e.hurst(), e.h, fields.join(","), e.objective)?;
        }
        csv.flush()?;
    }
    out.flush()?;
    Ok(())
}

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let x = match args.model {
        ModelArg::Exact => simulate_exact(&HurstParams::new(args.hurst, args.sigma)?, args.n, args.seed)?,
        ModelArg::Approx => {
            let table = args.table.load()?;
            let mix = table.lookup(args.hurst)?;
            assemble_precision(&mix, args.sigma, args.n, args.table.kappa)?.sample_x(args.seed)?
        }
    };
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "x")?;
    for v in x {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

fn model<'a>(kind: ModelArg, table: Option<&'a CoeffTable>, kappa: f64) -> Model<'a> {
    match (kind, table) {
        (ModelArg::Approx, Some(table)) => Model::Approx { table, kappa },
        _ => Model::Exact,
    }
}

fn write_fit(out: &mut dyn Write, fit: &MleResult) -> io::Result<()> {
    writeln!(out, "model,H,sd_H,sigma,loglik,mean,boundary,evaluations")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        fit.model, fit.hurst, fit.sd_hurst, fit.sigma, fit.loglik, fit.mean, fit.boundary, fit.iterations
    )
}

fn estimate_cmd(args: &EstimateArgs) -> Result<()> {
    let series = load_series(&args.input.input, &ReadOptions { na: args.input.na_string.clone() })?;
    let x = series.complete()?;
    let table = match args.model {
        ModelArg::Approx => Some(args.table.load()?),
        ModelArg::Exact => None,
    };
    let opts = MleOptions {
        center: !args.no_center,
        ..MleOptions::default()
    };
    let fit = mle(&x, model(args.model, table.as_ref(), args.table.kappa), &opts)?;
    if fit.boundary {
        eprintln!("warning: estimate lies on the boundary of the search interval");
    }
    let mut out = writer(args.output.as_deref())?;
    write_fit(&mut out, &fit)?;
    out.flush()?;
    Ok(())
}

fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let series = load_series(&args.input.input, &ReadOptions { na: args.input.na_string.clone() })?;
    let x = series.complete()?;
    let table = match args.model {
        ModelArg::Approx => Some(args.table.load()?),
        ModelArg::Exact => None,
    };
    let model = model(args.model, table.as_ref(), args.table.kappa);
    let fit = mle(&x, model, &MleOptions::default())?;
    let hurst = args.hurst.unwrap_or(fit.hurst);
    let sigma = args.sigma.unwrap_or(fit.sigma);
    let centred: Vec<f64> = x.iter().map(|v| v - fit.mean).collect();
    let pred = Predictor::new(model, hurst, sigma, x.len(), args.p)?.predict(&centred)?;
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "p,mean,sd")?;
    for (i, (m, s)) in pred.mean.iter().zip(&pred.sd).enumerate() {
        writeln!(out, "{},{},{}", i + 1, m + fit.mean, s)?;
    }
    out.flush()?;
    Ok(())
}

fn tables_for(ms: &[usize], paths: &[PathBuf]) -> Result<Vec<CoeffTable>> {
    if !paths.is_empty() && paths.len() != ms.len() {
        bail!("give one --table per --m value ({} vs {})", paths.len(), ms.len());
    }
    ms.iter()
        .enumerate()
        .map(|(i, &m)| load_table(paths.get(i).map(PathBuf::as_path), m))
        .collect()
}

fn replicate_cmd(args: &ReplicateArgs) -> Result<bool> {
    let tables = tables_for(&args.m, &args.table)?;
    let models: Vec<Model> = tables
        .iter()
        .map(|table| Model::Approx { table, kappa: args.kappa })
        .collect();
    let opts = ReplicationOptions {
        hurst: args.hurst,
        n: args.n,
        replications: args.replications as usize,
        seed: args.seed,
        mle: MleOptions {
            center: args.center,
            ..MleOptions::default()
        },
    };
    let report = replication_study(&opts, &models)?;
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "model,H_true,n,N,succeeded,mean_H,rmse,mae")?;
    let ok = report.estimates.len();
    writeln!(
        out,
        "exact,{},{},{},{ok},{},,",
        report.hurst, report.n, report.replications, report.exact_mean
    )?;
    for row in &report.approx {
        writeln!(
            out,
            "{},{},{},{},{ok},{},{},{}",
            row.model, report.hurst, report.n, report.replications, row.mean_estimate, row.rmse, row.mae
        )?;
    }
    out.flush()?;
    if let Some(path) = &args.estimates {
        let mut csv = writer(Some(path))?;
        let names: Vec<String> = report.approx.iter().map(|r| r.model.to_string()).collect();
        writeln!(csv, "replication,exact,{}", names.join(","))?;
        for e in &report.estimates {
            let approx: Vec<String> = e.approx.iter().map(|v| v.to_string()).collect();
            writeln!(csv, "{},{},{}", e.index, e.exact, approx.join(","))?;
        }
        csv.flush()?;
    }
    for failure in &report.failures {
        eprintln!("error: {failure}");
    }
    if !report.failures.is_empty() {
        eprintln!("{} of {} replications failed", report.failures.len(), report.replications);
        return Ok(args.allow_partial);
    }
    Ok(true)
}

fn predict_study_cmd(args: &PredictStudyArgs) -> Result<()> {
    let table = match args.model {
        ModelArg::Approx => Some(args.table.load()?),
        ModelArg::Exact => None,
    };
    let opts = PredictionStudyOptions {
        hurst: args.hurst,
        sigma: args.sigma,
        n: args.n,
        horizon: args.p,
        replications: args.replications,
        seed: args.seed,
    };
    let candidate = model(args.model, table.as_ref(), args.table.kappa);
    let report = prediction_error_study(&opts, Model::Exact, candidate)?;
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "p,err_mu,err_sigma")?;
    for ((p, mu), s) in report.horizons.iter().zip(&report.err_mu).zip(&report.err_sigma) {
        writeln!(out, "{p},{mu},{s}")?;
    }
    out.flush()?;
    Ok(())
}

fn kld_cmd(args: &KldArgs) -> Result<()> {
    let tables = tables_for(&args.m, &args.table)?;
    let grid: Vec<f64> = if args.hurst.is_empty() {
        (0..11).map(|i| 0.55 + 0.04 * i as f64).collect()
    } else {
        args.hurst.clone()
    };
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "H,m,kld,sqrt_kld")?;
    for &hurst in &grid {
        for table in &tables {
            let mix = table.lookup(hurst)?;
            let value = kld(hurst, args.n, &mix, args.kappa, args.reverse)?;
            writeln!(out, "{hurst},{},{value},{}", table.m(), value.max(0.0).sqrt())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn decompose_cmd(args: &DecomposeArgs) -> Result<()> {
    let series = load_series(&args.input.input, &ReadOptions { na: args.input.na_string.clone() })?;
    let obs = series.observation_model()?;
    let table = args.table.load()?;
    let approx = Model::Approx { table: &table, kappa: args.table.kappa };
    let mut fit = match series.complete() {
        Ok(x) => mle(&x, approx, &MleOptions::default())?,
        Err(_) => {
            let (Some(hurst), Some(sigma)) = (args.hurst, args.sigma) else {
                bail!("series has missing values; pass --H and --sigma to decompose it");
            };
            let present: Vec<f64> = series.values.iter().copied().filter(|v| !v.is_nan()).collect();
            MleResult {
                hurst,
                h: fgn_approx::hurst::h_from_hurst(hurst),
                sigma,
                loglik: f64::NAN,
                sd_hurst: f64::NAN,
                iterations: 0,
                model: approx.kind(),
                boundary: false,
                mean: present.iter().sum::<f64>() / present.len().max(1) as f64,
            }
        }
    };
    if let Some(h) = args.hurst {
        fit.hurst = h;
    }
    if let Some(s) = args.sigma {
        fit.sigma = s;
    }
    let d = decompose(&obs, &fit, &table, args.table.kappa)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    eprintln!("H = {}, sigma = {}, mean = {}", d.hurst, d.sigma, d.offset);
    eprintln!("phi = ({})", fmt(d.mixture.coefficients()));
    eprintln!("w = ({})", fmt(d.mixture.weights()));
    if args.check {
        eprintln!("max reconstruction residual = {:e}", d.reconstruction_residual());
    }
    let m = d.mixture.m();
    let mut out = writer(args.output.as_deref())?;
    let means: Vec<String> = (1..=m).map(|j| format!("mean{j}")).collect();
    let sds: Vec<String> = (1..=m).map(|j| format!("sd{j}")).collect();
    writeln!(out, "t,{},{},noise_mean,x_mean", means.join(","), sds.join(","))?;
    for t in 0..d.x_mean.len() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(d.component_means.iter().map(|c| c[t].to_string()));
        row.extend(d.component_sds.iter().map(|c| c[t].to_string()));
        row.push(d.noise_mean[t].to_string());
        row.push((d.x_mean[t] + d.offset).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares slope of `log y` on `log x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn time_min(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn bench_cmd(args: &BenchArgs) -> Result<()> {
    let table = args.table.load()?;
    let m = table.m();
    let mix = table.lookup(args.hurst)?;
    let params = HurstParams::new(args.hurst, 1.0)?;
    let mut out = writer(args.output.as_deref())?;
    writeln!(out, "model,n,seconds,factor_flops,nominal_flops,factor_storage,nominal_storage")?;
    let mut approx_points = Vec::new();
    for &n in &args.n {
        let q = assemble_precision(&mix, 1.0, n, args.table.kappa)?;
        let x = q.sample_x(args.seed)?;
        let seconds = time_min(args.repeats, || {
            loglik_approx_profiled(&x, &mix, 1.0, args.table.kappa)?;
            Ok(())
        })?;
        let chol = q.cholesky()?;
        debug_assert_eq!(chol.flops(), band_cholesky_flops(q.dim(), q.bandwidth()));
        let b = (m + 1) as u64;
        writeln!(
            out,
            "approx-m{m},{n},{seconds},{},{},{},{}",
            chol.flops(),
            n as u64 * b * b * b,
            chol.storage_len(),
            n as u64 * b * (b + 1)
        )?;
        eprintln!(
            "n = {n}: loglik factorization flops {}",
            loglik_approx_flops(&x, &mix, args.table.kappa)?
        );
        approx_points.push((n as f64, seconds));
    }
    let mut exact_points = Vec::new();
    for &n in &args.exact_n {
        let x = simulate_exact(&params, n, args.seed)?;
        let seconds = time_min(args.repeats, || {
            loglik_exact(&x, &params)?;
            Ok(())
        })?;
        writeln!(out, "exact,{n},{seconds},,,,")?;
        exact_points.push((n as f64, seconds));
    }
    out.flush()?;
    if approx_points.len() >= 2 {
        eprintln!("approximate log-log slope: {:.3}", loglog_slope(&approx_points));
    }
    if exact_points.len() >= 2 {
        eprintln!("exact log-log slope: {:.3}", loglog_slope(&exact_points));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::BuildTable(a) => build_table_cmd(a)?,
        Command::Simulate(a) => simulate_cmd(a)?,
        Command::Estimate(a) => estimate_cmd(a)?,
        Command::Predict(a) => predict_cmd(a)?,
        Command::Replicate(a) => return replicate_cmd(a),
        Command::PredictStudy(a) => predict_study_cmd(a)?,
        Command::Kld(a) => kld_cmd(a)?,
        Command::Decompose(a) => decompose_cmd(a)?,
        Command::Bench(a) => bench_cmd(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
