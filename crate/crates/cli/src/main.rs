//! `tapgnn`: graph statistics, training, evaluation, kernel equivalence
//! checks and streaming replay from the command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tapgnn_core::eval::{eval_link_prediction, MetricReport};
use tapgnn_core::graph::{chronological_split, graph_stats, GraphStats};
use tapgnn_core::kernels::{check_equivalence, EquivalenceConfig};
use tapgnn_core::model::{train, ModelParams};
use tapgnn_core::streaming::{
    batch_discrepancy, stream_bench, BenchConfig, BenchReport, FoldOrder, StreamBatch, StreamState,
};

use config::{DataArgs, Precision, RunConfig, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "tapgnn", version, about = "Temporal aggregation-propagation graph networks")]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true, value_parser = config::positive)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print size statistics of a temporal graph as CSV.
    Stats(DataArgs),
    /// Train a model and write it, its log and its test metrics to --out.
    Train(TrainArgs),
    /// Score the test split with a trained model.
    Eval(EvalArgs),
    /// Compare the AP kernels against direct aggregation on a graph.
    Check(CheckArgs),
    /// Replay the training split through the streaming state and time updates.
    Stream(StreamArgs),
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    precision: Option<Precision>,
    /// Also write metrics.csv and config.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    data: DataArgs,
    /// A kernel name or `all`.
    #[arg(long, default_value = "all", value_parser = config::kernel_choice)]
    kernel: config::Kernels,
    #[arg(long, default_value = "f64")]
    precision: Precision,
    /// Refuse graphs whose message-passing expansion exceeds this many links.
    #[arg(long, default_value_t = 50_000_000)]
    link_cap: u64,
    #[arg(long, default_value_t = 8, value_parser = config::positive)]
    message_dim: usize,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Edges per stream batch.
    #[arg(long, default_value_t = 256, value_parser = config::positive)]
    batch: usize,
    /// Layer counts for the latency sweep, comma-separated.
    #[arg(long, default_value = "1,2,3", value_parser = config::usize_list)]
    layers: config::UsizeList,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Fold all layers from the rows stored before each timestamp.
    #[arg(long)]
    literal: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if non_empty && !force {
            bail!("output directory {} is not empty; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_stats(args: &DataArgs) -> Result<()> {
    let run = RunConfig::resolve(args, None)?;
    let g = run.load_graph()?;
    let s = graph_stats(&g);
    println!("{}\n{}", GraphStats::CSV_HEADER, s.csv_row());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = RunConfig::resolve(&args.data, Some(args))?;
    let out = run.out.clone().context("train needs --out DIR")?;
    prepare_out(&out, args.force)?;
    write(&out, "config.json", &serde_json::to_string_pretty(&run)?)?;
    let g = run.load_graph()?;
    let split = chronological_split(&g, run.split)?;
    info!(
        "training on {} interactions, {} validation, {} test ({} dropped)",
        split.train.num_interactions(),
        split.val.len(),
        split.test.len(),
        split.dropped_test
    );
    let (params, log) = match run.precision {
        Precision::F64 => train::<f64>(&split, &run.train)?,
        Precision::F32 => {
            let (p, log) = train::<f32>(&split, &run.train)?;
            (p.cast(), log)
        }
    };
    params.save(out.join("model.tapg"))?;
    write(&out, "train_log.csv", &log.to_csv())?;
    let report = eval_link_prediction(&params, &split, run.seed)?;
    write(&out, "metrics.csv", &report.to_csv(run.seed))?;
    println!(
        "best_epoch={} best_val_auc={:.4} epochs_run={} test_auc={:.4} test_accuracy={:.4}",
        log.best_epoch, log.best_val_auc, log.epochs_run, report.auc, report.accuracy
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = RunConfig::resolve(&args.data, None)?;
    let params = ModelParams::<f64>::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let g = run.load_graph()?;
    let split = chronological_split(&g, run.split)?;
    let report: MetricReport = match args.precision.unwrap_or(run.precision) {
        Precision::F64 => eval_link_prediction(&params, &split, run.seed)?,
        Precision::F32 => eval_link_prediction(&params.cast::<f32>(), &split, run.seed)?,
    };
    let csv = report.to_csv(run.seed);
    print!("{csv}");
    if let Some(out) = &args.out {
        prepare_out(out, args.force)?;
        write(out, "metrics.csv", &csv)?;
        write(out, "config.json", &serde_json::to_string_pretty(&run)?)?;
    }
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<bool> {
    let run = RunConfig::resolve(&args.data, None)?;
    let g = run.load_graph()?;
    let cfg = EquivalenceConfig {
        message_dim: args.message_dim,
        out_dim: args.message_dim,
        seed: run.seed,
        link_cap: args.link_cap,
        ..Default::default()
    };
    let mut all = true;
    for &kernel in &args.kernel.0 {
        let report = match args.precision {
            Precision::F64 => check_equivalence::<f64>(&g, kernel, &cfg)?,
            Precision::F32 => check_equivalence::<f32>(&g, kernel, &cfg)?,
        };
        println!(
            "{} kernel={} precision={} temporal_nodes={} links={} max_abs={:.3e} max_rel={:.3e}",
            if report.pass { "PASS" } else { "FAIL" },
            report.kernel,
            report.precision,
            report.temporal_nodes,
            report.links,
            report.max_abs,
            report.max_rel
        );
        all &= report.pass;
    }
    Ok(all)
}

fn cmd_stream(args: &StreamArgs) -> Result<bool> {
    let run = RunConfig::resolve(&args.data, None)?;
    let params = ModelParams::<f64>::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let g = run.load_graph()?;
    let split = chronological_split(&g, run.split)?;
    if let Some(out) = &args.out {
        prepare_out(out, args.force)?;
    }

    let order = if args.literal { FoldOrder::Literal } else { FoldOrder::Exact };
    let mut state = StreamState::cold(&params, order);
    for batch in StreamBatch::windows(&split.train, args.batch)? {
        state.update(&batch)?;
    }
    let diff = batch_discrepancy(&state, &split.train)?;
    let exact = diff < 1e-9;
    println!(
        "{} stream-vs-batch order={order:?} batch={} max_abs_diff={diff:.3e}",
        if exact { "PASS" } else { "FAIL" },
        args.batch
    );

    let history = split.train.num_interactions();
    let room = g.num_interactions() - history;
    if args.batch > room {
        bail!("only {room} interactions follow the training split; lower --batch");
    }
    let bench = BenchConfig {
        batch_sizes: vec![args.batch],
        layers: args.layers.0.clone(),
        repetitions: args.reps,
        dim: params.config.dim,
        time_dim: params.config.time_dim,
        kernel: params.config.kernel,
        seed: run.seed,
        ..Default::default()
    };
    let report = stream_bench(&split.history, history, &bench)?;
    let csv = BenchReport::csv(&report.stream);
    print!("{csv}");
    if let Some(fit) = BenchReport::layer_fit(&report.stream, args.batch) {
        println!("layer_fit slope_ms={:.4} intercept_ms={:.4} r2={:.4}", fit.slope, fit.intercept, fit.r2);
    }
    if let Some(out) = &args.out {
        write(out, "latency.csv", &csv)?;
        write(out, "direct_latency.csv", &BenchReport::csv(&report.direct))?;
        write(out, "config.json", &serde_json::to_string_pretty(&run)?)?;
    }
    Ok(exact || args.literal)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Stats(a) => cmd_stats(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Check(a) => cmd_check(a),
        Command::Stream(a) => cmd_stream(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TAPGNN_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
