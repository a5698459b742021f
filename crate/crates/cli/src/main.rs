//! `autoens` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 run failure, 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoens::collect::{load_dir, read_jsonl, Method};
use autoens::diversity::pairwise_output_correlation;
use autoens::ensemble::{evaluate_ensemble, write_member_csv, EnsembleSummary};
use autoens::harness::{
    build_ensemble, compare_methods, emit_report, run_method, write_method_dir, ComparisonReport,
    ComparisonRow, ExperimentConfig, ReportFormat, RunArtifacts,
};
use autoens::netcore::init_model;
use autoens::schedule::{lr_range_scan, suggest_bounds};
use autoens::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "autoens",
    version,
    about = "Adaptive checkpoint ensembling for small classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines). Defaults to the two-moons desk setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed. Required when no config is given.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one collector and ensemble its checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Collector: ae, sse, fge, ce, rie or ind. Defaults to the config's method.
        #[arg(long)]
        method: Option<String>,
    },
    /// Scan an increasing learning-rate ramp and suggest schedule bounds.
    LrRange {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run several collectors on the same data and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated collectors. Defaults to all six.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Ensemble an existing checkpoint directory against the config's data.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Directory of `.aeck` checkpoint files.
        checkpoints: PathBuf,
    },
    /// Re-emit tables from a finished `train` or `compare` output directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding one subdirectory per method.
        run_dir: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Stratification(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Corruption(_) | Error::Json(_) => 4,
        _ => 3,
    }
}

fn load_config(common: &Common) -> autoens::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(seed)) => ExperimentConfig::two_moons(seed),
        (None, None) => return Err(Error::Config("pass --config or --seed".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn parse_methods(list: Option<&str>) -> autoens::Result<Vec<Method>> {
    match list {
        None => Ok(Method::ALL.to_vec()),
        Some(s) => s.split(',').map(str::parse).collect(),
    }
}

fn train(common: &Common, method: Option<&str>) -> autoens::Result<()> {
    let cfg = load_config(common)?;
    let method = method.map(str::parse).transpose()?.unwrap_or(cfg.method);
    let data = cfg.data()?;
    let result = run_method(&cfg, method, &data)?;
    let dir = cfg.output_dir.join(method.as_str());
    write_method_dir(&result, &dir)?;
    let summary = EnsembleSummary::new(&result.spec, &result.evaluation);
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!("wrote {}", dir.display());
    Ok(())
}

fn lr_range(common: &Common, format: &str) -> autoens::Result<()> {
    let format: ReportFormat = format.parse()?;
    let cfg = load_config(common)?;
    let data = cfg.data()?;
    let model = init_model(&cfg.train.layer_dims, cfg.seed)?;
    let mut opts = cfg.scan;
    opts.seed = cfg.seed;
    opts.batch_size = cfg.train.batch_size;
    let curve = lr_range_scan(&model, &data.train, &opts)?;
    let artifacts = RunArtifacts {
        range_scan: Some(curve.clone()),
        ..Default::default()
    };
    emit_report(&artifacts, format, &cfg.output_dir)?;
    let bounds = suggest_bounds(&curve)?;
    let text = serde_json::to_string_pretty(&bounds)?;
    fs::write(cfg.output_dir.join("bounds.json"), text.clone() + "\n")?;
    println!("{text}");
    Ok(())
}

/// Returns whether every method succeeded.
fn compare(common: &Common, methods: Option<&str>, format: &str) -> autoens::Result<bool> {
    let format: ReportFormat = format.parse()?;
    let cfg = load_config(common)?;
    let methods = parse_methods(methods)?;
    let (report, results) = compare_methods(&cfg, &methods, Some(&cfg.output_dir))?;
    let data = cfg.data()?;
    let mut artifacts = RunArtifacts::default();
    for (method, r) in &results {
        artifacts.logs.push((method.to_string(), r.run.log.clone()));
        if r.spec.len() >= 2 {
            let matrix = pairwise_output_correlation(&r.spec.members, data.test.inputs())?;
            let ids = r.spec.members.iter().map(|m| m.id.to_string()).collect();
            artifacts
                .correlations
                .push((method.to_string(), ids, matrix));
        }
    }
    let complete = report.is_complete();
    for f in &report.failures {
        eprintln!("{} failed: {}", f.method, f.error);
    }
    artifacts.comparison = Some(report);
    emit_report(&artifacts, format, &cfg.output_dir)?;
    let table = autoens::harness::comparison_table(artifacts.comparison.as_ref().unwrap());
    print!("{}", table.to_string(ReportFormat::Markdown)?);
    Ok(complete)
}

fn ensemble(common: &Common, checkpoints: &Path) -> autoens::Result<()> {
    let cfg = load_config(common)?;
    let data = cfg.data()?;
    let members = load_dir(checkpoints)?;
    let (spec, _) = build_ensemble(&cfg, members, &data)?;
    let eval = evaluate_ensemble(&spec, &data.test)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_member_csv(
        &spec,
        &eval,
        fs::File::create(cfg.output_dir.join("members.csv"))?,
    )?;
    let summary = serde_json::to_string_pretty(&EnsembleSummary::new(&spec, &eval))?;
    fs::write(cfg.output_dir.join("summary.json"), summary.clone() + "\n")?;
    println!("{summary}");
    Ok(())
}

fn report(common: &Common, run_dir: &Path, format: &str) -> autoens::Result<()> {
    let format: ReportFormat = format.parse()?;
    let out = common.out.clone().unwrap_or_else(|| run_dir.join("report"));
    let mut artifacts = RunArtifacts::default();
    let mut comparison = ComparisonReport::default();
    for method in Method::ALL {
        let dir = run_dir.join(method.as_str());
        let log_path = dir.join("log.jsonl");
        if !log_path.exists() {
            continue;
        }
        let log = read_jsonl(std::io::BufReader::new(fs::File::open(&log_path)?))?;
        let summary_path = dir.join("summary.json");
        if summary_path.exists() {
            let s: EnsembleSummary = serde_json::from_str(&fs::read_to_string(&summary_path)?)?;
            comparison.rows.push(ComparisonRow {
                method,
                ensemble_acc: s.ensemble_test_acc,
                best_single_acc: s.best_member_acc,
                improvement: s.ensemble_test_acc - s.best_member_acc,
                avg_steps_per_member: log.len() as f64 / s.t as f64,
                ensemble_size: s.t,
            });
        }
        artifacts.logs.push((method.to_string(), log));
    }
    if artifacts.logs.is_empty() {
        return Err(Error::Config(format!(
            "no method logs under {}",
            run_dir.display()
        )));
    }
    if !comparison.rows.is_empty() {
        artifacts.comparison = Some(comparison);
    }
    for path in emit_report(&artifacts, format, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train { common, method } => train(common, method.as_deref()).map(|_| true),
        Command::LrRange { common, format } => lr_range(common, format).map(|_| true),
        Command::Compare {
            common,
            method,
            format,
        } => compare(common, method.as_deref(), format),
        Command::Ensemble {
            common,
            checkpoints,
        } => ensemble(common, checkpoints).map(|_| true),
        Command::Report {
            common,
            run_dir,
            format,
        } => report(common, run_dir, format).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
