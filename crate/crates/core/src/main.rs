use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use repcate::annotation::SamplingKind;
use repcate::config::ExperimentConfig;
use repcate::dgp::{build_dataset_with, Benchmark};
use repcate::estimators::EstimatorKind;
use repcate::eval::{run_sweep_on, write_results_csv, write_summary_json};
use repcate::io::{read_dataset, write_dataset};
use repcate::plot::{panels, read_results, render_svg};
use repcate::Error;

/// Treatment effect estimation from representations: synthetic benchmarks,
/// estimators and evaluation sweeps.
#[derive(Parser)]
#[command(name = "repcate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate(CommonArgs),
    /// Run an annotation-level sweep and write results.csv and summary.json.
    Sweep(SweepArgs),
    /// Render one SVG per (benchmark, sampling) panel of a results CSV.
    Plot(PlotArgs),
    /// Print a short summary of a dataset directory or results CSV.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides seed).
    #[arg(long)]
    seed: Option<u64>,
    /// synsum or mimic (overrides benchmark).
    #[arg(long)]
    benchmark: Option<String>,
    /// Number of records (overrides dataset_size).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated annotation levels.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// Comma-separated methods: plug_in, info_extraction, direct_regression, adjusted.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Runs per cell.
    #[arg(long)]
    runs: Option<usize>,
    /// random or selective.
    #[arg(long)]
    sampling: Option<String>,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// results.csv from a sweep.
    #[arg(long)]
    results: PathBuf,
    /// Output SVG file for a single panel, or a directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset directory or results CSV.
    path: PathBuf,
}

/// Usage and configuration problems exit with 2; anything else with 1.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let usage = err.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::Format { .. } | Error::Csv(_) | Error::Json(_) | Error::Policy(_))
            )
        });
        Failure {
            code: if usage { 2 } else { 1 },
            err,
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

fn usage(msg: String) -> Failure {
    Failure {
        code: 2,
        err: anyhow::anyhow!(msg),
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(b) = &args.benchmark {
        cfg.benchmark = Benchmark::parse(b)?;
    }
    if let Some(n) = args.size {
        cfg.dataset_size = n;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?.resolved()?;
    let sweep = cfg.sweep_config()?;
    let ds = build_dataset_with(cfg.benchmark, cfg.dataset_size, &cfg.encoder, &cfg.priors, sweep.dataset_seed())?;
    let out = &cfg.output_dir;
    write_dataset(out, &ds).with_context(|| format!("writing dataset to {}", out.display()))?;
    write_text(&out.join("resolved_config.json"), &cfg.to_json()?)?;
    eprintln!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(l) = &args.levels {
        cfg.sweep.annotation_levels = Some(l.clone());
    }
    if let Some(ms) = &args.methods {
        cfg.sweep.methods = ms.iter().map(|m| EstimatorKind::parse(m)).collect::<Result<_, _>>()?;
    }
    if let Some(r) = args.runs {
        cfg.sweep.n_runs = r;
    }
    if let Some(s) = &args.sampling {
        cfg.sampling.kind = match s.as_str() {
            "random" => SamplingKind::Random,
            "selective" => SamplingKind::Selective,
            other => return Err(usage(format!("sampling: unknown kind {other:?}"))),
        };
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }

    let dataset = match &cfg.dataset {
        Some(dir) => {
            let ds = read_dataset(dir)?;
            cfg.benchmark = ds.benchmark;
            cfg.dataset_size = ds.len();
            ds
        }
        None => {
            let sweep = cfg.sweep_config()?;
            build_dataset_with(cfg.benchmark, cfg.dataset_size, &cfg.encoder, &cfg.priors, sweep.dataset_seed())?
        }
    };
    let cfg = cfg.resolved()?;
    let result = run_sweep_on(&cfg.sweep_config()?, &dataset, cfg.jobs)?;

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(File::create(out.join("results.csv")).context("creating results.csv")?);
    write_results_csv(&result, &mut w)?;
    w.flush().context("writing results.csv")?;
    let mut w = BufWriter::new(File::create(out.join("summary.json")).context("creating summary.json")?);
    write_summary_json(&result, &mut w)?;
    w.flush().context("writing summary.json")?;
    write_text(&out.join("resolved_config.json"), &cfg.to_json()?)?;

    let failed = result.failures().count();
    eprintln!(
        "{} cells ({} failed) written to {}",
        result.cells.len(),
        failed,
        out.display()
    );
    if failed > 0 {
        for c in result.failures() {
            eprintln!("  {} level {} run {}: {}", c.method.as_str(), c.level, c.run, c.error.as_deref().unwrap_or(""));
        }
        return Err(Failure {
            code: 1,
            err: anyhow::anyhow!("{failed} cells failed"),
        });
    }
    Ok(())
}

fn plot(args: &PlotArgs) -> Result<(), Failure> {
    let file = File::open(&args.results)
        .map_err(|e| usage(format!("cannot open {}: {e}", args.results.display())))?;
    let ps = panels(&read_results(BufReader::new(file))?);
    let single_file = args.out.extension().is_some_and(|e| e == "svg");
    if single_file && ps.len() == 1 {
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).context("creating output directory")?;
        }
        write_text(&args.out, &render_svg(&ps[0]))?;
        return Ok(());
    }
    let dir = if single_file {
        args.out.with_extension("")
    } else {
        args.out.clone()
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for p in &ps {
        write_text(&dir.join(format!("{}.svg", p.name())), &render_svg(p))?;
    }
    Ok(())
}

fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let mut out = String::new();
    if args.path.is_dir() {
        let ds = read_dataset(&args.path)?;
        let n = ds.len() as f64;
        let treated = ds.records.iter().filter(|r| r.t).count();
        let cates: Vec<f64> = ds.records.iter().map(|r| r.true_cate).collect();
        let ate = cates.iter().sum::<f64>() / n;
        let sd = (cates.iter().map(|c| (c - ate).powi(2)).sum::<f64>() / n).sqrt();
        out += &format!("benchmark      {}\n", ds.benchmark.as_str());
        out += &format!("records        {} ({} train, {} test)\n", ds.len(), ds.split.train.len(), ds.split.test.len());
        out += &format!("phi width      {}\n", ds.records.first().map_or(0, |r| r.phi.len()));
        out += &format!("treated        {:.4}\n", treated as f64 / n);
        out += &format!("ATE            {ate:.4}\n");
        out += &format!("sd(true_cate)  {sd:.4}\n");
    } else {
        let file = File::open(&args.path).map_err(|e| usage(format!("cannot open {}: {e}", args.path.display())))?;
        for p in panels(&read_results(BufReader::new(file))?) {
            out += &format!("{} / {}\n", p.benchmark, p.sampling);
            for (m, pts) in &p.series {
                for (level, mean, ci) in pts {
                    out += &format!("  {:<18} {:>6}  {:.4} ± {:.4}\n", m.as_str(), level, mean, ci);
                }
            }
        }
    }
    print!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Inspect(a) => inspect(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
