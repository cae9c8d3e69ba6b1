use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use atc_cli::bench::{run_bench, BenchConfig, DEFAULT_TOKEN_GRID};
use atc_cli::commands::{cmd_cluster, cmd_reduce_demo, cmd_synth, load_demo_config};
use atc_cli::{CliError, Result};
use atc_core::config::parse_list;
use atc_core::{Engine, LinkageKind, StoppingRule};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atc", version, about = "Hierarchical clustering and merging of transformer tokens")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "ATC_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads for batch-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster every sequence of a tensor file and write labels as JSON.
    Cluster(ClusterArgs),
    /// Time the clustering engines over a grid of token counts and batch sizes.
    Bench(BenchArgs),
    /// Run the staged reduction demo and write per-stage label grids.
    ReduceDemo(DemoArgs),
    /// Write a seeded random tensor file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "average")]
    linkage: String,
    #[arg(long, default_value = "nnchain")]
    engine: String,
    /// Number of clusters per sequence.
    #[arg(long, conflicts_with = "threshold", required_unless_present = "threshold")]
    k: Option<usize>,
    /// Merge while the closest pair is within this cosine distance.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated token counts.
    #[arg(long)]
    n_list: Option<String>,
    /// Comma-separated batch sizes.
    #[arg(long, default_value = "1")]
    batch_list: String,
    /// Comma-separated engines.
    #[arg(long, default_value = "nnchain")]
    engine: String,
    /// Comma-separated linkages.
    #[arg(long, default_value = "average")]
    linkage: String,
    /// Iterations per configuration, warmup included.
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Leading fraction of iterations excluded from statistics.
    #[arg(long, default_value_t = 0.25)]
    warmup: f64,
    /// Fraction of tokens kept by each clustering call.
    #[arg(long, default_value_t = 0.5)]
    keep_rate: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

#[derive(Args)]
struct DemoArgs {
    /// key=value config file.
    #[arg(long, alias = "config")]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long = "L")]
    depth: Option<usize>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    keep_rate: Option<f64>,
    #[arg(long)]
    linkage: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// B,N,D
    #[arg(long)]
    shape: String,
    /// Draw tokens around this many separated centers.
    #[arg(long)]
    groups: Option<usize>,
}

fn invalid(e: atc_core::AtcError) -> CliError {
    CliError::Invalid(e.to_string())
}

fn lists<T: std::str::FromStr<Err = atc_core::AtcError>>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(invalid))
        .collect()
}

fn configure_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(CliError::Invalid("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cluster(a) => {
            configure_threads(cli.threads)?;
            let kind: LinkageKind = a.linkage.parse().map_err(invalid)?;
            let engine: Engine = a.engine.parse().map_err(invalid)?;
            let stop = match (a.k, a.threshold) {
                (Some(k), _) => StoppingRule::TargetClusters(k),
                (None, Some(h)) => StoppingRule::DistanceThreshold(h),
                (None, None) => unreachable!("clap requires one of --k / --threshold"),
            };
            cmd_cluster(&a.input, &a.output, kind, engine, stop)?;
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                n_list: match &a.n_list {
                    Some(s) => parse_list(s, "n-list").map_err(invalid)?,
                    None => DEFAULT_TOKEN_GRID.to_vec(),
                },
                batch_list: parse_list(&a.batch_list, "batch-list").map_err(invalid)?,
                engines: lists(&a.engine)?,
                linkages: lists(&a.linkage)?,
                repeats: a.repeats,
                warmup_fraction: a.warmup,
                keep_rate: a.keep_rate,
                dim: a.dim,
                seed: cli.seed,
                threads: cli.threads,
            };
            let report = run_bench(&cfg)?;
            let file =
                File::create(&a.output).map_err(|e| CliError::io(format!("creating {}", a.output.display()), e))?;
            report.write_csv(BufWriter::new(file))?;
        }
        Command::ReduceDemo(a) => {
            let mut overrides = vec![("seed", cli.seed.to_string())];
            let opt = [
                ("schedule", a.schedule),
                ("t", a.t.map(|v| v.to_string())),
                ("L", a.depth.map(|v| v.to_string())),
                ("blocks", a.blocks),
                ("keep_rate", a.keep_rate.map(|v| v.to_string())),
                ("linkage", a.linkage),
            ];
            overrides.extend(opt.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
            let cfg = load_demo_config(a.input.as_deref(), &overrides)?;
            cmd_reduce_demo(&cfg, &a.output)?;
        }
        Command::Synth(a) => {
            let dims: Vec<usize> = parse_list(&a.shape, "shape").map_err(invalid)?;
            let shape: [usize; 3] = dims
                .try_into()
                .map_err(|_| CliError::Invalid(format!("--shape needs B,N,D, got `{}`", a.shape)))?;
            cmd_synth(&a.output, shape, a.groups, cli.seed)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("atc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
