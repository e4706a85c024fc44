use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use promips::bench::{run_bench, write_reports, BenchConfig};
use promips::index::{build_index, load_index, save_index, IndexConfig, DEFAULT_PAGE_SIZE};
use promips::ingest::{ingest, DataFormat};
use promips::search::{brute_force_mip, search, QueryResult, Variant};
use promips::{Dataset64, Error, Index64};

#[derive(Parser)]
#[command(name = "promips", version, about = "Approximate maximum inner product search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a dataset file.
    Build(BuildArgs),
    /// Answer queries against a saved index.
    Query(QueryArgs),
    /// Run a benchmark described by a key=value config file.
    Bench(BenchArgs),
    /// Exact top-k by brute force.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    /// fvecs or csv; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Projected dimension or "auto".
    #[arg(long, default_value = "auto")]
    m: String,
    #[arg(long, default_value_t = 5)]
    kp: usize,
    #[arg(long, default_value_t = 40)]
    nkey: usize,
    #[arg(long, default_value_t = 10)]
    ksp: usize,
    /// Ring width or "auto".
    #[arg(long, default_value = "auto")]
    epsilon: String,
    #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
    page_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.9)]
    c: f64,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// i (incremental scan) or ii (probe radius).
    #[arg(long, default_value = "ii")]
    variant: String,
    /// CSV file for per-query results; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. --set k=10,20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Report directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Io(_) => 1,
        Error::Format(_) => 2,
        Error::ContractViolation(_) => 3,
    }
}

fn data_format(explicit: &Option<String>, path: &Path) -> promips::Result<DataFormat> {
    match explicit {
        Some(f) => f.parse(),
        None => Ok(DataFormat::from_path(path)),
    }
}

fn auto<T: std::str::FromStr>(flag: &str, value: &str) -> promips::Result<Option<T>> {
    if value.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    value
        .parse()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("--{flag}: expected auto or a number, got '{value}'")))
}

fn emit(report: &Option<PathBuf>, text: &str) -> promips::Result<()> {
    match report {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn join<V: ToString>(values: impl Iterator<Item = V>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn build(args: BuildArgs) -> promips::Result<()> {
    let data: Dataset64 = ingest(&args.input, data_format(&args.format, &args.input)?)?;
    let cfg = IndexConfig {
        m: auto("m", &args.m)?,
        kp: args.kp,
        n_key: args.nkey,
        ksp: args.ksp,
        epsilon: auto("epsilon", &args.epsilon)?,
        page_size: args.page_size,
        seed: args.seed,
    };
    let index = build_index(&data, &cfg)?;
    save_index(&index, &args.out)?;
    let p = index.params();
    eprintln!(
        "indexed {} points (d={}, m={}, epsilon={}, {} sub-partitions, {} + {} pages) into {}",
        index.len(),
        index.dim(),
        index.projected_dim(),
        p.epsilon,
        index.sub_partition_count(),
        index.projected_store().page_count(),
        index.original_store().page_count(),
        args.out.display()
    );
    Ok(())
}

fn result_rows(out: &mut String, results: &[QueryResult<f64>]) {
    out.push_str("query,termination,pages,candidates,cpu_us,total_us,ids,ips\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{:.3},{:.3},{},{}",
            r.termination.as_str(),
            r.pages(),
            r.candidates,
            r.cpu_us,
            r.total_us,
            join(r.ids.iter()),
            join(r.ips.iter())
        );
    }
}

fn query(args: QueryArgs) -> promips::Result<()> {
    let index: Index64 = load_index(&args.index)?;
    let queries: Dataset64 = ingest(&args.queries, data_format(&args.format, &args.queries)?)?;
    let variant: Variant = args.variant.parse()?;
    let results = queries
        .points()
        .map(|q| search(&index, q, args.c, args.p, args.k, variant))
        .collect::<promips::Result<Vec<_>>>()?;
    let mut out = String::new();
    result_rows(&mut out, &results);
    emit(&args.report, &out)
}

fn bench(args: BenchArgs) -> promips::Result<()> {
    let mut cfg = BenchConfig::load(&args.config)?;
    for item in &args.overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{item}'")));
        };
        cfg.set(key, value)?;
    }
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    let report = run_bench::<f64>(&cfg)?;
    println!("{}", promips::bench::aggregate_csv(&report.aggregates).trim_end());
    if let Some(dir) = &cfg.out_dir {
        for path in write_reports(&report, dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> promips::Result<()> {
    let data: Dataset64 = ingest(&args.input, data_format(&args.format, &args.input)?)?;
    let queries: Dataset64 = ingest(&args.queries, data_format(&args.format, &args.queries)?)?;
    let results = queries
        .points()
        .map(|q| brute_force_mip(&data, q, args.k))
        .collect::<promips::Result<Vec<_>>>()?;
    let mut out = String::from("query,ids,ips\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", join(r.ids.iter()), join(r.ips.iter()));
    }
    emit(&args.report, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Oracle(a) => oracle(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
